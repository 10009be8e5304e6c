// Copyright (c) 2026 The dolg authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dolg/error.hpp"
#include "dolg/tensor.hpp"

namespace dolg {

/// RGB image in CHW layout, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // 3 * height * width

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  static Image blank(std::size_t h, std::size_t w) {
    Image img;
    img.height = h;
    img.width = w;
    img.data.assign(3 * h * w, 0.0);
    return img;
  }
};

namespace detail {
inline int ppm_token(std::istream& in, std::size_t& offset) {
  // skips whitespace and '#' comments, returns next integer token
  int c = in.get();
  ++offset;
  while (in) {
    if (c == '#') {
      while (in && c != '\n') {
        c = in.get();
        ++offset;
      }
    } else if (std::isspace(c)) {
      c = in.get();
      ++offset;
    } else {
      break;
    }
  }
  if (!in || !std::isdigit(c)) throw format_error("ppm: expected integer token", offset - 1);
  int value = 0;
  while (in && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
    ++offset;
  }
  return value;
}
}  // namespace detail

/// Reads a binary P6 PPM with maxval 255.
inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open image file: " + path);
  std::size_t offset = 0;
  char m0 = static_cast<char>(in.get());
  char m1 = static_cast<char>(in.get());
  offset += 2;
  if (m0 != 'P' || m1 != '6') throw format_error("ppm: bad magic in " + path, 0);
  const int w = detail::ppm_token(in, offset);
  const int h = detail::ppm_token(in, offset);
  const int maxv = detail::ppm_token(in, offset);
  if (w <= 0 || h <= 0) throw format_error("ppm: bad dimensions in " + path, offset);
  if (maxv != 255) throw format_error("ppm: only maxval 255 supported in " + path, offset);
  // ppm_token consumed exactly one whitespace byte after the maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw format_error("ppm: truncated pixel payload in " + path,
                       offset + static_cast<std::size_t>(in.gcount()));
  Image img = Image::blank(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(y * img.width + x) * 3 + c] / 255.0;
  return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write image file: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        raw[(y * img.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw data_error("short write: " + path);
}

/// Bilinear resize (half-pixel centers). Returns the input untouched when the
/// target size matches, which keeps scale-1.0 extraction bit-exact.
inline Image resize_bilinear(const Image& src, std::size_t oh, std::size_t ow) {
  if (oh == 0 || ow == 0) throw invalid_input_error("resize: zero output size");
  if (oh == src.height && ow == src.width) return src;
  Image dst = Image::blank(oh, ow);
  const double sy = static_cast<double>(src.height) / static_cast<double>(oh);
  const double sx = static_cast<double>(src.width) / static_cast<double>(ow);
  for (std::size_t y = 0; y < oh; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < ow; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src.at(c, y0, x0) * (1.0 - wx) + src.at(c, y0, x1) * wx;
        const double bot = src.at(c, y1, x0) * (1.0 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

inline Image crop(const Image& src, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x + w > src.width || y + h > src.height)
    throw invalid_input_error("crop: region (" + std::to_string(x) + "," + std::to_string(y) + "," +
                              std::to_string(w) + "," + std::to_string(h) + ") outside " +
                              std::to_string(src.width) + "x" + std::to_string(src.height));
  Image dst = Image::blank(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t yy = 0; yy < h; ++yy)
      for (std::size_t xx = 0; xx < w; ++xx) dst.at(c, yy, xx) = src.at(c, y + yy, x + xx);
  return dst;
}

/// Maps [0,1] pixels to the model's expected input range [-1, 1].
inline Tensor to_model_input(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = img.data[i] * 2.0 - 1.0;
  return t;
}

}  // namespace dolg
