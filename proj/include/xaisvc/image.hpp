#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xaisvc/error.hpp"

namespace xaisvc {

/// Row-major image with 1 or 3 interleaved channels, pixel values in [0, 1].
class Image {
 public:
  Image() = default;

  Image(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
      : Image(height, width, channels, std::vector<double>(height * width * channels, fill)) {}

  Image(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> pixels)
      : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
    if (height == 0 || width == 0) throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
    if (channels != 1 && channels != 3) {
      throw Error(ErrorCode::InvalidArgument, "image must have 1 or 3 channels", {{"channels", channels}});
    }
    if (pixels_.size() != height * width * channels) {
      throw Error(ErrorCode::DimensionMismatch, "pixel count does not match height*width*channels",
                  {{"expected", height * width * channels}, {"actual", pixels_.size()}});
    }
    for (double v : pixels_) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidArgument, "pixel values must lie in [0, 1]");
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t area() const noexcept { return height_ * width_; }
  std::span<const double> pixels() const noexcept { return pixels_; }

  double at(std::size_t row, std::size_t col, std::size_t ch = 0) const {
    return pixels_[(row * width_ + col) * channels_ + ch];
  }
  void set(std::size_t row, std::size_t col, std::size_t ch, double v) {
    pixels_[(row * width_ + col) * channels_ + ch] = v;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 1;
  std::vector<double> pixels_;
};

/// Per-pixel nonnegative saliency scores, normalized so the maximum is 1
/// (or all zero).
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> scores;

  double at(std::size_t row, std::size_t col) const { return scores[row * width + col]; }
  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

/// keep[i] is true when pixel i (row-major) is retained.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<bool> keep;

  std::size_t kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct MaskedImage {
  Image image;
  std::string sample_id;
  double keep_fraction = 1.0;
  double fill = 0.0;
};

// ---------------------------------------------------------------------------
// JSON tensors: {"dims": [H, W, C], "data": [...]} with row-major data.

inline nlohmann::json to_json(const Image& img) {
  return {{"dims", {img.height(), img.width(), img.channels()}},
          {"data", std::vector<double>(img.pixels().begin(), img.pixels().end())}};
}

inline Image image_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dims") || !j.contains("data") || !j["dims"].is_array() ||
      !j["data"].is_array()) {
    throw Error(ErrorCode::InvalidArgument, "image tensor must be an object with 'dims' and 'data' arrays");
  }
  const auto& dims = j["dims"];
  if (dims.size() != 2 && dims.size() != 3) {
    throw Error(ErrorCode::InvalidArgument, "image tensor dims must be [H, W] or [H, W, C]");
  }
  for (const auto& d : dims) {
    if (!d.is_number_unsigned()) throw Error(ErrorCode::InvalidArgument, "image tensor dims must be positive integers");
  }
  const auto h = dims[0].get<std::size_t>();
  const auto w = dims[1].get<std::size_t>();
  const std::size_t c = dims.size() == 3 ? dims[2].get<std::size_t>() : 1;
  std::vector<double> data;
  data.reserve(j["data"].size());
  for (const auto& v : j["data"]) {
    if (!v.is_number()) throw Error(ErrorCode::InvalidArgument, "image tensor data must be numeric");
    data.push_back(v.get<double>());
  }
  return Image(h, w, c, std::move(data));
}

inline nlohmann::json to_json(const SaliencyMap& map) {
  return {{"dims", {map.height, map.width}}, {"data", map.scores}};
}

inline SaliencyMap saliency_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dims") || !j.contains("data") || j["dims"].size() != 2) {
    throw Error(ErrorCode::InvalidArgument, "saliency tensor must be {dims: [H, W], data: [...]}");
  }
  SaliencyMap m{j["dims"][0].get<std::size_t>(), j["dims"][1].get<std::size_t>(),
                j["data"].get<std::vector<double>>()};
  if (m.scores.size() != m.height * m.width) {
    throw Error(ErrorCode::DimensionMismatch, "saliency data length does not match dims");
  }
  return m;
}

inline nlohmann::json to_json(const Mask& mask) {
  std::vector<int> keep(mask.keep.begin(), mask.keep.end());
  return {{"dims", {mask.height, mask.width}}, {"keep", keep}};
}

inline Mask mask_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dims") || !j.contains("keep") || j["dims"].size() != 2) {
    throw Error(ErrorCode::InvalidArgument, "mask must be {dims: [H, W], keep: [...]}");
  }
  Mask m{j["dims"][0].get<std::size_t>(), j["dims"][1].get<std::size_t>(), {}};
  for (const auto& v : j["keep"]) m.keep.push_back(v.is_boolean() ? v.get<bool>() : v.get<int>() != 0);
  if (m.keep.size() != m.height * m.width) throw Error(ErrorCode::DimensionMismatch, "mask length does not match dims");
  return m;
}

// ---------------------------------------------------------------------------
// Binary image format (little endian):
//   "XIMG" | u8 version=1 | u8 channels | u32 height | u32 width | f64 pixels[H*W*C]

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw Error(ErrorCode::SchemaViolation, "truncated binary image");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace detail

inline void write_binary(std::ostream& out, const Image& img) {
  out.write("XIMG", 4);
  detail::write_le<std::uint8_t>(out, 1);
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(img.channels()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.height()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.width()));
  for (double v : img.pixels()) detail::write_le<double>(out, v);
}

inline Image read_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "XIMG") {
    throw Error(ErrorCode::SchemaViolation, "not an XIMG binary image");
  }
  if (detail::read_le<std::uint8_t>(in) != 1) throw Error(ErrorCode::SchemaViolation, "unsupported XIMG version");
  const auto c = detail::read_le<std::uint8_t>(in);
  const auto h = detail::read_le<std::uint32_t>(in);
  const auto w = detail::read_le<std::uint32_t>(in);
  std::vector<double> px(static_cast<std::size_t>(h) * w * c);
  for (auto& v : px) v = detail::read_le<double>(in);
  return Image(h, w, c, std::move(px));
}

}  // namespace xaisvc
