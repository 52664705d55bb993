#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "densr/tensor.hpp"

namespace densr {
namespace io {

// ---------------------------------------------------------------------------
// 8-bit PNG, [C,H,W] float images in [0,1]
// ---------------------------------------------------------------------------

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

template <class S>
void write_png(const std::string& path, const Tensor<S>& img) {
  if (img.rank() != 3 || (img.shape[0] != 3 && img.shape[0] != 1))
    throw std::invalid_argument("write_png expects [1|3,H,W]");
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];

  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        double v = static_cast<double>(img.at3(ch, y, x));
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[static_cast<std::size_t>(x) * c + ch] = static_cast<png_byte>(v * 255.0 + 0.5);
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as [3,H,W] in [0,1] (grayscale/palette/alpha are expanded
/// and flattened to RGB).
template <class S>
Tensor<S> read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for reading: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));

  std::vector<png_byte> raw(static_cast<std::size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<S> out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at3(c, y, x) = static_cast<S>(raw[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / S(255);
  return out;
}

// ---------------------------------------------------------------------------
// Raw tensor sidecar: 16-byte header (magic 'RTF1', dtype code, rank,
// reserved), then rank u32 dims, then float32 little-endian payload.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kRawMagic = 0x31465452u;  // "RTF1"
inline constexpr std::uint32_t kRawDtypeF32 = 1u;

template <class S>
void write_raw_tensor(const std::string& path, const Tensor<S>& t) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open for writing: " + path);
  const std::uint32_t head[4] = {kRawMagic, kRawDtypeF32, static_cast<std::uint32_t>(t.rank()), 0u};
  if (std::fwrite(head, sizeof(head), 1, fp.get()) != 1)
    throw std::runtime_error("raw tensor header write failed: " + path);
  std::vector<std::uint32_t> dims(t.shape.begin(), t.shape.end());
  if (!dims.empty() && std::fwrite(dims.data(), sizeof(std::uint32_t), dims.size(), fp.get()) != dims.size())
    throw std::runtime_error("raw tensor dims write failed: " + path);
  std::vector<float> payload(t.data.begin(), t.data.end());
  if (!payload.empty() &&
      std::fwrite(payload.data(), sizeof(float), payload.size(), fp.get()) != payload.size())
    throw std::runtime_error("raw tensor payload write failed: " + path);
}

template <class S>
Tensor<S> read_raw_tensor(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open for reading: " + path);
  std::uint32_t head[4];
  if (std::fread(head, sizeof(head), 1, fp.get()) != 1)
    throw std::runtime_error("raw tensor header read failed: " + path);
  if (head[0] != kRawMagic) throw std::runtime_error("bad raw tensor magic: " + path);
  if (head[1] != kRawDtypeF32) throw std::runtime_error("unsupported raw tensor dtype: " + path);
  const std::uint32_t rank = head[2];
  if (rank == 0 || rank > 8) throw std::runtime_error("bad raw tensor rank: " + path);
  std::vector<std::uint32_t> dims(rank);
  if (std::fread(dims.data(), sizeof(std::uint32_t), rank, fp.get()) != rank)
    throw std::runtime_error("raw tensor dims read failed: " + path);
  std::vector<int> shape(dims.begin(), dims.end());
  Tensor<S> t(shape);
  std::vector<float> payload(static_cast<std::size_t>(t.numel()));
  if (!payload.empty() &&
      std::fread(payload.data(), sizeof(float), payload.size(), fp.get()) != payload.size())
    throw std::runtime_error("raw tensor payload read failed: " + path);
  for (std::size_t i = 0; i < payload.size(); ++i) t.data[i] = static_cast<S>(payload[i]);
  return t;
}

}  // namespace io
}  // namespace densr
