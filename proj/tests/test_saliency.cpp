#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "xaisvc/saliency.hpp"

using namespace xaisvc;

namespace {

SaliencyMap map_of(std::size_t h, std::size_t w, std::vector<double> s) { return SaliencyMap{h, w, std::move(s)}; }

Image random_image(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(h * w * c);
  for (auto& v : px) v = u(rng);
  return Image(h, w, c, std::move(px));
}

// Order of pixel indices by descending score, row-major among equals.
std::vector<std::size_t> rank_order(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return idx;
}

}  // namespace

TEST(NormalizeSaliency, DividesByMax) {
  auto m = normalize_saliency(2, 2, {0, 2, 4, 0});
  EXPECT_EQ(m.scores, (std::vector<double>{0, 0.5, 1, 0}));
  EXPECT_EQ(normalize_saliency(2, 2, {0, 0, 0, 0}).scores, (std::vector<double>{0, 0, 0, 0}));
}

TEST(NormalizeSaliency, NegativeScoreRejected) {
  try {
    normalize_saliency(1, 2, {0.5, -0.1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeScore);
  }
}

TEST(NormalizeSaliency, RandomMaxIsOne) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> raw(64);
  for (auto& v : raw) v = u(rng);
  auto m = normalize_saliency(8, 8, raw);
  EXPECT_EQ(*std::max_element(m.scores.begin(), m.scores.end()), 1.0);
}

TEST(ThresholdMask, TieResolvedRowMajor) {
  auto mask = threshold_mask(map_of(2, 2, {0.9, 0.1, 0.4, 0.4}), 0.5);
  EXPECT_EQ(mask.keep, (std::vector<bool>{true, false, true, false}));
}

TEST(ThresholdMask, FullFractionKeepsEverything) {
  auto mask = threshold_mask(map_of(2, 3, {0.1, 0.0, 0.3, 1.0, 0.2, 0.0}), 1.0);
  EXPECT_EQ(mask.kept(), 6u);
}

TEST(ThresholdMask, InvalidFraction) {
  for (double q : {0.0, -0.2, 1.01}) {
    try {
      threshold_mask(map_of(1, 1, {1.0}), q);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidFraction);
    }
  }
}

TEST(ThresholdMask, ExactDecimalFractions) {
  // 0.3 * 10 is 3.0000000000000004 in binary; the mask still keeps 3.
  auto mask = threshold_mask(map_of(2, 5, std::vector<double>(10, 0.5)), 0.3);
  EXPECT_EQ(mask.kept(), 3u);
}

TEST(ThresholdMask, MatchesFullSortOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(64);
  for (auto& v : s) v = u(rng);
  auto mask = threshold_mask(map_of(8, 8, s), 0.25);
  auto order = rank_order(s);
  std::vector<bool> expected(64, false);
  for (std::size_t i = 0; i < 16; ++i) expected[order[i]] = true;
  EXPECT_EQ(mask.keep, expected);
}

TEST(ThresholdMask, CardinalityProperty) {
  std::mt19937_64 rng(500);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng);
    std::vector<double> s(h * w);
    // Coarse scores so ties are common.
    for (auto& v : s) v = std::floor(u(rng) * 4) / 4;
    double q = u(rng);
    if (q == 0.0) q = 0.5;
    auto mask = threshold_mask(map_of(h, w, s), q);
    ASSERT_EQ(mask.kept(), static_cast<std::size_t>(std::ceil(q * static_cast<double>(h * w))));
  }
}

TEST(ApplyMask, IdentityAndBlank) {
  std::mt19937_64 rng(2);
  auto img = random_image(rng, 4, 5, 3);
  Mask all{4, 5, std::vector<bool>(20, true)};
  EXPECT_EQ(apply_mask(img, all, 0.0).image, img);
  Mask none{4, 5, std::vector<bool>(20, false)};
  auto blank = apply_mask(img, none, 0.0).image;
  for (double v : blank.pixels()) EXPECT_EQ(v, 0.0);
}

TEST(ApplyMask, DimensionMismatch) {
  Image img(2, 2, 1);
  Mask m{3, 2, std::vector<bool>(6, true)};
  try {
    apply_mask(img, m, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(ApplyMask, RandomMaskMatchesPixelLoop) {
  std::mt19937_64 rng(77);
  auto img = random_image(rng, 6, 7, 3);
  Mask m{6, 7, {}};
  std::bernoulli_distribution coin(0.4);
  for (int i = 0; i < 42; ++i) m.keep.push_back(coin(rng));
  auto out = apply_mask(img, m, 0.25, "x", 0.4);
  EXPECT_EQ(out.sample_id, "x");
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 7; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        EXPECT_EQ(out.image.at(r, c, ch), m.keep[r * 7 + c] ? img.at(r, c, ch) : 0.25);
}

TEST(LinearPredict, ExamplesAndDotOracle) {
  LinearModel zero{2, 2, {0, 0, 0, 0}};
  Image ones(2, 2, 1, 1.0);
  EXPECT_EQ(linear_predict(zero, ones), linear_squash(zero, 0.0));
  EXPECT_EQ(linear_predict(zero, ones), 0.5);

  LinearModel diag{2, 2, {1, 0, 0, 2}};
  EXPECT_EQ(linear_score(diag, ones), 3.0);
  EXPECT_EQ(linear_predict(diag, ones), linear_squash(diag, 3.0));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LinearModel rnd{5, 4, std::vector<double>(20)};
  for (auto& w : rnd.weights) w = u(rng);
  auto img = random_image(rng, 5, 4, 3);
  double dot = 0;
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) dot += rnd.weights[r * 4 + c] * img.at(r, c, ch);
  EXPECT_NEAR(linear_score(rnd, img), dot, 1e-12);

  EXPECT_THROW(linear_predict(diag, Image(3, 2, 1)), Error);
}

TEST(OcclusionSaliency, LinearTwoByTwoAnalytic) {
  LinearModel diag{2, 2, {1, 0, 0, 2}};
  Image ones(2, 2, 1, 1.0);
  auto map = occlusion_saliency([&](const Image& x) { return linear_predict(diag, x); }, ones, {1, 1, 0.0});
  ASSERT_EQ(map.scores.size(), 4u);
  EXPECT_NEAR(map.scores[0], 0.5, 1e-12);
  EXPECT_EQ(map.scores[1], 0.0);
  EXPECT_EQ(map.scores[2], 0.0);
  EXPECT_NEAR(map.scores[3], 1.0, 1e-12);
}

TEST(OcclusionSaliency, ConstantModelGivesZeroMap) {
  std::mt19937_64 rng(4);
  auto img = random_image(rng, 5, 5, 1);
  auto map = occlusion_saliency([](const Image&) { return 0.7; }, img, {2, 1, 0.0});
  for (double v : map.scores) EXPECT_EQ(v, 0.0);
}

TEST(OcclusionSaliency, FullWindowIsUniform) {
  LinearModel m{3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9}};
  Image img(3, 3, 1, 0.5);
  auto map = occlusion_saliency([&](const Image& x) { return linear_predict(m, x); }, img, {3, 1, 0.0});
  for (double v : map.scores) EXPECT_EQ(v, 1.0);
  // Window larger than the image is clamped to a single full placement.
  auto big = occlusion_saliency([&](const Image& x) { return linear_predict(m, x); }, img, {10, 1, 0.0});
  EXPECT_EQ(big, map);
}

TEST(OcclusionSaliency, RankMatchesAnalyticContributions) {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng);
    LinearModel m{h, w, std::vector<double>(h * w), 0.5 / static_cast<double>(h * w), 0.25};
    for (auto& x : m.weights) x = u(rng);
    auto img = random_image(rng, h, w, 1);
    std::vector<double> contrib(h * w);
    for (std::size_t i = 0; i < h * w; ++i) contrib[i] = std::fabs(m.weights[i] * img.pixels()[i]);
    auto map = occlusion_saliency([&](const Image& x) { return linear_predict(m, x); }, img, {1, 1, 0.0});
    EXPECT_EQ(rank_order(map.scores), rank_order(contrib)) << "trial " << trial;
  }
}

TEST(OcclusionSaliency, DeterministicAcrossParallelism) {
  std::mt19937_64 rng(10);
  auto img = random_image(rng, 8, 8, 3);
  LinearModel m{8, 8, std::vector<double>(64), 0.001, 0.4};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : m.weights) x = u(rng);
  auto model = [&](const Image& x) { return linear_predict(m, x); };
  auto a = occlusion_saliency(model, img, {2, 1, 0.0, 1});
  auto b = occlusion_saliency(model, img, {2, 1, 0.0, 1});
  auto c = occlusion_saliency(model, img, {2, 1, 0.0, 4});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(OcclusionSaliency, WeightMonotonicity) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    LinearModel m{4, 4, std::vector<double>(16), 0.01, 0.3};
    for (auto& x : m.weights) x = u(rng);
    auto img = random_image(rng, 4, 4, 1);
    const std::size_t target = trial % 16;
    auto rank_of = [&](const LinearModel& lm) {
      auto map = occlusion_saliency([&](const Image& x) { return linear_predict(lm, x); }, img, {1, 1, 0.0});
      auto order = rank_order(map.scores);
      return std::find(order.begin(), order.end(), target) - order.begin();
    };
    auto before = rank_of(m);
    m.weights[target] *= 1.5;
    EXPECT_LE(rank_of(m), before);
  }
}

TEST(OcclusionSaliency, ModelFailureCarriesPlacement) {
  Image img(3, 3, 1, 0.5);
  int calls = 0;
  auto flaky = [&](const Image&) -> double {
    if (calls++ == 4) throw std::runtime_error("boom");
    return 0.5;
  };
  try {
    occlusion_saliency(flaky, img, {1, 1, 0.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelFailure);
    // First call is the unoccluded image, so the fifth call is placement 3.
    EXPECT_EQ(e.details().at("placement").get<std::size_t>(), 3u);
  }
  EXPECT_THROW(occlusion_saliency(flaky, img, {0, 1, 0.0}), Error);
}

TEST(OcclusionSaliency, FullKeepMaskLeavesPredictionUnchanged) {
  std::mt19937_64 rng(31);
  auto img = random_image(rng, 6, 6, 3);
  LinearModel m{6, 6, std::vector<double>(36, 0.2), 0.01, 0.2};
  auto map = occlusion_saliency([&](const Image& x) { return linear_predict(m, x); }, img, {2, 2, 0.0});
  auto masked = apply_mask(img, threshold_mask(map, 1.0), 0.0);
  EXPECT_EQ(linear_predict(m, masked.image), linear_predict(m, img));
}

TEST(ImageIo, JsonAndBinaryRoundTrip) {
  std::mt19937_64 rng(3);
  for (std::size_t c : {1u, 3u}) {
    auto img = random_image(rng, 5, 3, c);
    EXPECT_EQ(image_from_json(to_json(img)), img);
    std::stringstream ss;
    write_binary(ss, img);
    EXPECT_EQ(read_binary(ss), img);
  }
  EXPECT_THROW(image_from_json(nlohmann::json{{"dims", {2, 2}}, {"data", {0.1, 0.2}}}), Error);
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_binary(bad), Error);
}

TEST(ImageIo, RejectsOutOfRangePixels) {
  EXPECT_THROW(Image(1, 1, 1, std::vector<double>{1.5}), Error);
  EXPECT_THROW(Image(1, 1, 2, 0.0), Error);
}
