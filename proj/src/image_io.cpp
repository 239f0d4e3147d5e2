#include "lgnet/image_io.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <fstream>

namespace lgnet {

namespace {

bool has_signature(const std::string& path, const std::vector<unsigned char>& sig) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image file: " + path);
  std::vector<unsigned char> head(sig.size());
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  return in.gcount() == static_cast<std::streamsize>(sig.size()) && head == sig;
}

std::vector<std::uint8_t> read_png_raw(const std::string& path, std::uint32_t format, int& h, int& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageIoError("unreadable PNG " + path + ": " + img.message);
  img.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageIoError("unreadable PNG " + path + ": " + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return buf;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  std::array<char, JMSG_LENGTH_MAX> message{};
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message.data());
  std::longjmp(err->jump, 1);
}

RgbImage read_jpeg(const std::string& path) {
  FILE* file = std::fopen(path.c_str(), "rb");
  if (!file) throw ImageIoError("cannot open image file: " + path);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buf;
  int h = 0;
  int w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    throw ImageIoError("unreadable JPEG " + path + ": " + err.message.data());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = static_cast<int>(cinfo.output_height);
  w = static_cast<int>(cinfo.output_width);
  buf.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + static_cast<std::size_t>(cinfo.output_scanline) * static_cast<std::size_t>(w) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  RgbImage img = RgbImage::zeros(h, w);
  for (Eigen::Index i = 0; i < img.pixels.cols(); ++i)
    for (int c = 0; c < 3; ++c) img.pixels(c, i) = static_cast<float>(buf[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)]) / 255.0f;
  return img;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

RgbImage read_rgb(const std::string& path) {
  if (has_signature(path, {0xFF, 0xD8, 0xFF})) return read_jpeg(path);
  int h = 0;
  int w = 0;
  const auto buf = read_png_raw(path, PNG_FORMAT_RGB, h, w);
  RgbImage img = RgbImage::zeros(h, w);
  for (Eigen::Index i = 0; i < img.pixels.cols(); ++i)
    for (int c = 0; c < 3; ++c) img.pixels(c, i) = static_cast<float>(buf[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)]) / 255.0f;
  return img;
}

GrayImage read_gray_png(const std::string& path) {
  if (!has_signature(path, {0x89, 'P', 'N', 'G'})) throw ImageIoError("mask is not a PNG file: " + path);
  GrayImage g;
  g.values = read_png_raw(path, PNG_FORMAT_GRAY, g.height, g.width);
  return g;
}

void write_png(const std::string& path, const RgbImage& image) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(image.pixels.cols()) * 3);
  for (Eigen::Index i = 0; i < image.pixels.cols(); ++i)
    for (int c = 0; c < 3; ++c) buf[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)] = to_byte(image.pixels(c, i));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ImageIoError("cannot write PNG " + path + ": " + img.message);
}

void write_png(const std::string& path, const GrayImage& image) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.values.data(), 0, nullptr))
    throw ImageIoError("cannot write PNG " + path + ": " + img.message);
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
  GrayImage g{mask.height, mask.width, std::vector<std::uint8_t>(mask.size())};
  std::transform(mask.values.begin(), mask.values.end(), g.values.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
  write_png(path, g);
}

}  // namespace lgnet
