#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "srhand/io.h"

namespace srhand::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::string& path, const Tensor<double>& img) {
  if (img.shape.size() != 3 || (img.shape[0] != 1 && img.shape[0] != 3))
    throw ConfigError("png writer expects a [1|3,H,W] image");
  const Index C = img.shape[0], H = img.shape[1], W = img.shape[2];

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(W * C));
  const Index hw = H * W;
  for (Index r = 0; r < H; ++r) {
    for (Index c = 0; c < W; ++c)
      for (Index ch = 0; ch < C; ++ch) {
        double v = img.data[ch * hw + r * W + c];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[static_cast<std::size_t>(c * C + ch)] =
            static_cast<png_byte>(v * 255.0 + 0.5);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<double> read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open for reading: " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw IoError("not a png file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);            // palette/low-bit-depth to 8-bit
  png_set_strip_16(png);          // 16-bit to 8-bit
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const Index W = static_cast<Index>(png_get_image_width(png, info));
  const Index H = static_cast<Index>(png_get_image_height(png, info));
  const Index C = static_cast<Index>(png_get_channels(png, info));
  if (C != 1 && C != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported png channel count in " + path);
  }

  std::vector<png_byte> row(static_cast<std::size_t>(W * C));
  Tensor<double> img = Tensor<double>::zeros({C, H, W});
  const Index hw = H * W;
  for (Index r = 0; r < H; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (Index c = 0; c < W; ++c)
      for (Index ch = 0; ch < C; ++ch)
        img.data[ch * hw + r * W + c] =
            static_cast<double>(row[static_cast<std::size_t>(c * C + ch)]) / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Raw float32 dump for debug imagery: magic, dims, then row-major data.
void write_float_image(const std::string& path, const Tensor<double>& img) {
  if (img.shape.size() != 3) throw ConfigError("float image dump expects [C,H,W]");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write("SRFI\x01\n", 6);
  std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.shape[0]),
                           static_cast<std::uint32_t>(img.shape[1]),
                           static_cast<std::uint32_t>(img.shape[2])};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (Index i = 0; i < img.data.size(); ++i) {
    float v = static_cast<float>(img.data[i]);
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  if (!f) throw IoError("short write: " + path);
}

Tensor<double> read_float_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, "SRFI\x01\n", 6) != 0)
    throw IoError("not a float image dump: " + path);
  std::uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f) throw IoError("truncated float image dump: " + path);
  Tensor<double> img = Tensor<double>::zeros(
      {static_cast<Index>(dims[0]), static_cast<Index>(dims[1]), static_cast<Index>(dims[2])});
  for (Index i = 0; i < img.data.size(); ++i) {
    float v;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    img.data[i] = static_cast<double>(v);
  }
  if (!f) throw IoError("truncated float image dump: " + path);
  return img;
}

}  // namespace srhand::io
