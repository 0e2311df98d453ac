#pragma once

// Reference data-processing service: dataset groups, seeded synthetic
// data and CutMix augmentation.

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "xaisvc/image.hpp"
#include "xaisvc/transport.hpp"
#include "xaisvc/util.hpp"

namespace xaisvc::reference {

struct Sample {
  std::string sample_id;
  Image image;
  std::string label;
};

struct AugmentationLink {
  std::string parent_group_id;
  std::string method;
  json parameters = json::object();
};

struct DatasetGroup {
  std::string group_id;
  std::string name;
  std::vector<Sample> samples;
  std::optional<AugmentationLink> augmentation_of;
};

inline std::string label_name(std::size_t k) { return "class-" + std::to_string(k); }

/// Clean pattern for label k of `labels`: an oriented sinusoidal grating,
/// one orientation/frequency per label.
inline Image label_pattern(std::size_t k, std::size_t labels, std::size_t height, std::size_t width,
                           std::size_t channels = 1) {
  Image img(height, width, channels);
  const double theta = std::numbers::pi * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(labels, 1));
  const double freq = 1.0 + static_cast<double>(k % 2);
  const double size = static_cast<double>(std::max(height, width));
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double t = static_cast<double>(r) * std::cos(theta) + static_cast<double>(c) * std::sin(theta);
      const double v = 0.5 + 0.4 * std::sin(2.0 * std::numbers::pi * freq * t / size + 0.5);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        img.set(r, c, ch, std::clamp(v * (1.0 - 0.2 * static_cast<double>(ch)), 0.0, 1.0));
      }
    }
  }
  return img;
}

struct SyntheticSpec {
  std::size_t labels = 3;
  std::size_t per_label = 4;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;
  std::uint64_t seed = 7;
  double noise = 0.15;
};

/// Per-label patterns plus seeded uniform noise. Same spec, same bytes.
inline DatasetGroup generate_synthetic_dataset(const SyntheticSpec& spec, std::string group_id, std::string name) {
  if (spec.labels == 0 || spec.per_label == 0 || spec.height == 0 || spec.width == 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic dataset counts and sizes must be at least 1");
  }
  DatasetGroup g{std::move(group_id), std::move(name), {}, std::nullopt};
  SeededRng rng(spec.seed);
  for (std::size_t k = 0; k < spec.labels; ++k) {
    const Image pattern = label_pattern(k, spec.labels, spec.height, spec.width, spec.channels);
    for (std::size_t i = 0; i < spec.per_label; ++i) {
      Image img = pattern;
      for (std::size_t r = 0; r < spec.height; ++r)
        for (std::size_t c = 0; c < spec.width; ++c)
          for (std::size_t ch = 0; ch < spec.channels; ++ch)
            img.set(r, c, ch, std::clamp(img.at(r, c, ch) + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0));
      char id[48];
      std::snprintf(id, sizeof id, "s%02zu-%03zu", k, i);
      g.samples.push_back({id, std::move(img), label_name(k)});
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// CutMix

struct CutRect {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool contains(std::size_t r, std::size_t c) const {
    return r >= row && r < row + height && c >= col && c < col + width;
  }
  friend bool operator==(const CutRect&, const CutRect&) = default;
};

struct AugmentedSample {
  Image image;
  std::map<std::string, double> label_weights;
  CutRect rect;
};

/// Rectangle of side ratio sqrt(1 - lambda), top-left corner seeded uniform
/// over all positions that keep it inside the image.
inline CutRect cutmix_rect(std::size_t height, std::size_t width, double lambda, std::uint64_t seed) {
  if (!(lambda > 0.0 && lambda < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "cutmix lambda must lie in (0, 1)", {{"lambda", lambda}});
  }
  const double side = std::sqrt(1.0 - lambda);
  CutRect rect;
  rect.height = std::min(height, static_cast<std::size_t>(std::llround(static_cast<double>(height) * side)));
  rect.width = std::min(width, static_cast<std::size_t>(std::llround(static_cast<double>(width) * side)));
  SeededRng rng(seed);
  rect.row = static_cast<std::size_t>(rng.below(height - rect.height + 1));
  rect.col = static_cast<std::size_t>(rng.below(width - rect.width + 1));
  return rect;
}

inline AugmentedSample cutmix(const Image& a, const std::string& label_a, const Image& b, const std::string& label_b,
                              double lambda, std::uint64_t seed) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels()) {
    throw Error(ErrorCode::DimensionMismatch, "cutmix images must share dimensions");
  }
  const CutRect rect = cutmix_rect(a.height(), a.width(), lambda, seed);
  Image out = a;
  for (std::size_t r = rect.row; r < rect.row + rect.height; ++r)
    for (std::size_t c = rect.col; c < rect.col + rect.width; ++c)
      for (std::size_t ch = 0; ch < a.channels(); ++ch) out.set(r, c, ch, b.at(r, c, ch));
  AugmentedSample s{std::move(out), {}, rect};
  s.label_weights[label_a] += lambda;
  s.label_weights[label_b] += 1.0 - lambda;
  return s;
}

/// Label with the largest weight; ties resolve to the smaller label name.
inline std::string dominant_label(const std::map<std::string, double>& weights) {
  std::string best;
  double w = -1.0;
  for (const auto& [label, weight] : weights) {
    if (weight > w) {
      best = label;
      w = weight;
    }
  }
  return best;
}

/// Draws lambda ~ Beta(alpha, alpha) with Johnk's method on the seeded
/// engine. Used only when a task does not pin lambda explicitly.
inline double sample_lambda(double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_alpha must be positive");
  SeededRng rng(seed);
  for (;;) {
    const double x = std::pow(rng.uniform(), 1.0 / alpha);
    const double y = std::pow(rng.uniform(), 1.0 / alpha);
    if (x + y <= 1.0 && x + y > 0.0) {
      const double l = x / (x + y);
      if (l > 0.0 && l < 1.0) return l;
    }
  }
}

/// CutMix every sample with a seeded partner from the same group. Each output
/// sample takes the dominant label of its mix.
inline DatasetGroup cutmix_group(const DatasetGroup& parent, double lambda, std::uint64_t seed, std::string group_id,
                                 std::string name, json recorded_params) {
  DatasetGroup g{std::move(group_id), std::move(name), {}, AugmentationLink{parent.group_id, "cutmix", std::move(recorded_params)}};
  const std::size_t n = parent.samples.size();
  SeededRng partner_rng(mix_seed(seed, 0xC07));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = n > 1 ? (i + 1 + partner_rng.below(n - 1)) % n : i;
    const auto& a = parent.samples[i];
    const auto& b = parent.samples[j];
    auto mixed = cutmix(a.image, a.label, b.image, b.label, lambda, mix_seed(seed, i));
    g.samples.push_back({a.sample_id + "-cm", std::move(mixed.image), dominant_label(mixed.label_weights)});
  }
  return g;
}

// ---------------------------------------------------------------------------
// Store + service handler

inline json group_metadata(const DatasetGroup& g) {
  json meta = {{"group_id", g.group_id}, {"name", g.name}, {"sample_count", g.samples.size()}};
  if (g.augmentation_of) {
    meta["augmentation_of"] = {{"parent_group_id", g.augmentation_of->parent_group_id},
                               {"method", g.augmentation_of->method},
                               {"parameters", g.augmentation_of->parameters}};
  } else {
    meta["augmentation_of"] = nullptr;
  }
  return meta;
}

inline json to_json(const Sample& s) {
  return {{"sample_id", s.sample_id}, {"label", s.label}, {"image", xaisvc::to_json(s.image)}};
}

inline Sample sample_from_json(const json& j) {
  return {j.at("sample_id").get<std::string>(), image_from_json(j.at("image")), j.at("label").get<std::string>()};
}

/// Groups by id. Writes are serialized; reads run concurrently.
class DatasetStore {
 public:
  void put(DatasetGroup group) {
    require_slug(group.group_id, "group");
    std::map<std::string, int> seen;
    for (const auto& s : group.samples) {
      if (++seen[s.sample_id] > 1) {
        throw Error(ErrorCode::DuplicateId, "sample id '" + s.sample_id + "' repeats within group",
                    {{"sample_id", s.sample_id}});
      }
    }
    std::unique_lock lk(mu_);
    if (group.augmentation_of && !groups_.count(group.augmentation_of->parent_group_id)) {
      throw Error(ErrorCode::UnknownDataset, "parent group does not exist",
                  {{"group_id", group.augmentation_of->parent_group_id}});
    }
    if (groups_.count(group.group_id)) {
      throw Error(ErrorCode::DuplicateId, "group '" + group.group_id + "' already exists", {{"group_id", group.group_id}});
    }
    auto id = group.group_id;
    groups_.emplace(std::move(id), std::make_shared<const DatasetGroup>(std::move(group)));
  }

  std::shared_ptr<const DatasetGroup> get(const std::string& id) const {
    std::shared_lock lk(mu_);
    auto it = groups_.find(id);
    if (it == groups_.end()) throw Error(ErrorCode::UnknownDataset, "unknown group '" + id + "'", {{"group_id", id}});
    return it->second;
  }

  std::vector<std::shared_ptr<const DatasetGroup>> list() const {
    std::shared_lock lk(mu_);
    std::vector<std::shared_ptr<const DatasetGroup>> out;
    for (const auto& [_, g] : groups_) out.push_back(g);
    return out;
  }

  /// Refused while augmented children still reference the group.
  void remove(const std::string& id) {
    std::unique_lock lk(mu_);
    if (!groups_.count(id)) throw Error(ErrorCode::UnknownDataset, "unknown group '" + id + "'", {{"group_id", id}});
    for (const auto& [child_id, g] : groups_) {
      if (g->augmentation_of && g->augmentation_of->parent_group_id == id) {
        throw Error(ErrorCode::Conflict, "group '" + id + "' has augmented children",
                    {{"group_id", id}, {"child", child_id}});
      }
    }
    groups_.erase(id);
  }

  DatasetGroup augment(const std::string& parent_id, const json& request) {
    const auto method = request.value("method", std::string("cutmix"));
    if (method != "cutmix") {
      throw Error(ErrorCode::InvalidArgument, "unsupported augmentation method '" + method + "'", {{"method", method}});
    }
    auto parent = get(parent_id);
    const auto seed = request.value("seed", std::uint64_t{0});
    double lambda;
    json recorded = {{"seed", seed}};
    if (request.contains("lambda")) {
      lambda = request["lambda"].get<double>();
    } else {
      const double alpha = request.value("lambda_alpha", 1.0);
      lambda = sample_lambda(alpha, mix_seed(seed, 0xBE7A));
      recorded["lambda_alpha"] = alpha;
    }
    recorded["lambda"] = lambda;
    const auto new_id = request.at("new_group_id").get<std::string>();
    auto child = cutmix_group(*parent, lambda, seed, new_id, request.value("name", new_id), recorded);
    put(child);
    return child;
  }

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const DatasetGroup>> groups_;
};

namespace detail {

inline std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(std::move(cur));
  return parts;
}

inline ServiceResponse not_found(const ServiceRequest& req) {
  return {404, Error(ErrorCode::InvalidArgument, "no route " + req.method + " " + req.path).to_json()};
}

}  // namespace detail

/// Dataset service routes:
///   GET    /groups                      list metadata
///   POST   /groups                      upload {group_id, name, samples}
///   POST   /groups/synthetic            {group_id, name, labels, per_label, height, width, channels, seed, noise}
///   GET    /groups/{id}                 metadata
///   GET    /groups/{id}/samples         {group, samples}
///   POST   /groups/{id}/augment         {method, new_group_id, name, lambda | lambda_alpha, seed}
///   DELETE /groups/{id}
inline ServiceHandler dataset_service(std::shared_ptr<DatasetStore> store) {
  return [store](const ServiceRequest& req) -> ServiceResponse {
    const auto parts = detail::split_path(req.path);
    if (parts.empty() || parts[0] != "groups") return detail::not_found(req);
    if (parts.size() == 1) {
      if (req.method == "GET") {
        json out = json::array();
        for (const auto& g : store->list()) out.push_back(group_metadata(*g));
        return {200, {{"groups", out}}};
      }
      if (req.method == "POST") {
        DatasetGroup g{req.body.at("group_id").get<std::string>(), req.body.value("name", std::string()), {}, std::nullopt};
        if (g.name.empty()) g.name = g.group_id;
        for (const auto& s : req.body.at("samples")) g.samples.push_back(sample_from_json(s));
        auto meta = group_metadata(g);
        store->put(std::move(g));
        return {201, meta};
      }
    }
    if (parts.size() == 2 && parts[1] == "synthetic" && req.method == "POST") {
      SyntheticSpec spec;
      const auto& b = req.body;
      spec.labels = b.value("labels", spec.labels);
      spec.per_label = b.value("per_label", spec.per_label);
      spec.height = b.value("height", spec.height);
      spec.width = b.value("width", spec.width);
      spec.channels = b.value("channels", spec.channels);
      spec.seed = b.value("seed", spec.seed);
      spec.noise = b.value("noise", spec.noise);
      const auto id = b.at("group_id").get<std::string>();
      auto g = generate_synthetic_dataset(spec, id, b.value("name", id));
      auto meta = group_metadata(g);
      store->put(std::move(g));
      return {201, meta};
    }
    if (parts.size() == 2) {
      if (req.method == "GET") return {200, group_metadata(*store->get(parts[1]))};
      if (req.method == "DELETE") {
        store->remove(parts[1]);
        return {200, {{"deleted", parts[1]}}};
      }
    }
    if (parts.size() == 3 && parts[2] == "samples" && req.method == "GET") {
      auto g = store->get(parts[1]);
      json samples = json::array();
      for (const auto& s : g->samples) samples.push_back(to_json(s));
      return {200, {{"group", group_metadata(*g)}, {"samples", samples}}};
    }
    if (parts.size() == 3 && parts[2] == "augment" && req.method == "POST") {
      auto child = store->augment(parts[1], req.body);
      return {201, group_metadata(child)};
    }
    return detail::not_found(req);
  };
}

}  // namespace xaisvc::reference
