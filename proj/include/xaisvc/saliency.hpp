#pragma once

// Saliency maps, top-q masks and the reference occlusion method.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "xaisvc/error.hpp"
#include "xaisvc/image.hpp"

namespace xaisvc {

/// Divides by the maximum; an all-zero grid stays all-zero.
inline SaliencyMap normalize_saliency(std::size_t height, std::size_t width, std::vector<double> raw) {
  if (raw.size() != height * width) throw Error(ErrorCode::DimensionMismatch, "raw saliency length does not match dims");
  double peak = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!(raw[i] >= 0.0)) {
      throw Error(ErrorCode::NegativeScore, "saliency scores must be nonnegative", {{"index", i}, {"value", raw[i]}});
    }
    peak = std::max(peak, raw[i]);
  }
  if (peak > 0.0) {
    for (auto& v : raw) v /= peak;
  }
  return SaliencyMap{height, width, std::move(raw)};
}

/// Number of pixels a keep fraction q retains out of n. The small slack keeps
/// q*n that is an integer up to binary rounding (0.3 * 10) from rounding up.
inline std::size_t kept_pixel_count(double q, std::size_t n) {
  const double raw = q * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Keeps the ceil(q*H*W) highest-scoring pixels; ties go to the earlier
/// pixel in row-major order.
inline Mask threshold_mask(const SaliencyMap& map, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidFraction, "keep fraction must lie in (0, 1]", {{"q", keep_fraction}});
  }
  const std::size_t n = map.height * map.width;
  Mask mask{map.height, map.width, std::vector<bool>(n, false)};
  if (n == 0) return mask;
  const std::size_t k = kept_pixel_count(keep_fraction, n);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.scores[a] > map.scores[b]; });
  for (std::size_t i = 0; i < k; ++i) mask.keep[order[i]] = true;
  return mask;
}

inline MaskedImage apply_mask(const Image& image, const Mask& mask, double fill, std::string sample_id = {},
                              double keep_fraction = 1.0) {
  if (image.height() != mask.height || image.width() != mask.width) {
    throw Error(ErrorCode::DimensionMismatch, "mask dimensions do not match image",
                {{"image", {image.height(), image.width()}}, {"mask", {mask.height, mask.width}}});
  }
  if (!(fill >= 0.0 && fill <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fill must lie in [0, 1]");
  Image out = image;
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      if (mask.keep[r * image.width() + c]) continue;
      for (std::size_t ch = 0; ch < image.channels(); ++ch) out.set(r, c, ch, fill);
    }
  }
  return MaskedImage{std::move(out), std::move(sample_id), keep_fraction, fill};
}

struct OcclusionParams {
  std::size_t window = 2;
  std::size_t stride = 1;
  double fill = 0.0;
  // Concurrent model calls; results are assembled in placement order.
  std::size_t parallelism = 1;
};

namespace detail {

struct Placement {
  std::size_t row;
  std::size_t col;
};

inline std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window <= extent; s += stride) starts.push_back(s);
  return starts;
}

}  // namespace detail

/// Model-agnostic occlusion saliency. `model` maps an image to the confidence
/// of the target label. Each window placement scores
/// max(0, original - occluded); a pixel's raw score is the mean over the
/// placements covering it, then the map is normalized.
template <typename Model>
  requires std::invocable<Model&, const Image&>
SaliencyMap occlusion_saliency(Model&& model, const Image& image, const OcclusionParams& params) {
  if (params.window == 0 || params.stride == 0) {
    throw Error(ErrorCode::InvalidArgument, "window and stride must be at least 1",
                {{"window", params.window}, {"stride", params.stride}});
  }
  if (!(params.fill >= 0.0 && params.fill <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fill must lie in [0, 1]");

  const std::size_t win_h = std::min(params.window, image.height());
  const std::size_t win_w = std::min(params.window, image.width());
  std::vector<detail::Placement> placements;
  for (auto r : detail::window_starts(image.height(), win_h, params.stride)) {
    for (auto c : detail::window_starts(image.width(), win_w, params.stride)) placements.push_back({r, c});
  }

  const double original = static_cast<double>(model(image));
  std::vector<double> drops(placements.size(), 0.0);

  auto evaluate = [&](std::size_t p) {
    Image occluded = image;
    const auto [r0, c0] = placements[p];
    for (std::size_t r = r0; r < r0 + win_h; ++r)
      for (std::size_t c = c0; c < c0 + win_w; ++c)
        for (std::size_t ch = 0; ch < image.channels(); ++ch) occluded.set(r, c, ch, params.fill);
    double occluded_conf;
    try {
      occluded_conf = static_cast<double>(model(occluded));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ModelFailure, std::string("model failed at placement ") + std::to_string(p) + ": " + e.what(),
                  {{"placement", p}});
    }
    drops[p] = std::max(0.0, original - occluded_conf);
  };

  const std::size_t workers = std::min(std::max<std::size_t>(params.parallelism, 1), placements.size());
  if (workers <= 1) {
    for (std::size_t p = 0; p < placements.size(); ++p) evaluate(p);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::optional<std::size_t> failed_at;
    std::exception_ptr failure;
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t p = next++; p < placements.size(); p = next++) {
            try {
              evaluate(p);
            } catch (...) {
              std::lock_guard lk(err_mu);
              // Report the lowest failing placement regardless of scheduling.
              if (!failed_at || p < *failed_at) {
                failed_at = p;
                failure = std::current_exception();
              }
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  const std::size_t n = image.area();
  std::vector<double> sum(n, 0.0);
  std::vector<std::size_t> cover(n, 0);
  for (std::size_t p = 0; p < placements.size(); ++p) {
    const auto [r0, c0] = placements[p];
    for (std::size_t r = r0; r < r0 + win_h; ++r) {
      for (std::size_t c = c0; c < c0 + win_w; ++c) {
        sum[r * image.width() + c] += drops[p];
        ++cover[r * image.width() + c];
      }
    }
  }
  std::vector<double> raw(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (cover[i] > 0) raw[i] = sum[i] / static_cast<double>(cover[i]);
  }
  return normalize_saliency(image.height(), image.width(), std::move(raw));
}

/// Linear scoring model: confidence = clamp(offset + scale * <w, x>, 0, 1),
/// where the H x W weight grid applies to every channel.
struct LinearModel {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> weights;
  double scale = 0.01;
  double offset = 0.5;
};

inline double linear_score(const LinearModel& model, const Image& image) {
  if (image.height() != model.height || image.width() != model.width || model.weights.size() != model.height * model.width) {
    throw Error(ErrorCode::DimensionMismatch, "linear model weights do not match image",
                {{"model", {model.height, model.width}}, {"image", {image.height(), image.width()}}});
  }
  double dot = 0.0;
  for (std::size_t r = 0; r < image.height(); ++r)
    for (std::size_t c = 0; c < image.width(); ++c)
      for (std::size_t ch = 0; ch < image.channels(); ++ch) dot += model.weights[r * model.width + c] * image.at(r, c, ch);
  return dot;
}

inline double linear_squash(const LinearModel& model, double score) {
  return std::clamp(model.offset + model.scale * score, 0.0, 1.0);
}

inline double linear_predict(const LinearModel& model, const Image& image) {
  return linear_squash(model, linear_score(model, image));
}

}  // namespace xaisvc
