#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <thread>

#include "xaisvc/reference/host.hpp"

using namespace xaisvc;
using namespace xaisvc::reference;

namespace {

Image random_image(SeededRng& rng, std::size_t h, std::size_t w, std::size_t c = 1) {
  Image img(h, w, c);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t ch = 0; ch < c; ++ch) img.set(r, col, ch, rng.uniform());
  return img;
}

ExplanationRecord record(const std::string& id, double original, double masked, std::string label = "",
                         std::string predicted = "") {
  ExplanationRecord r;
  r.explanation.sample_id = id;
  r.explanation.method_id = "occlusion";
  r.explanation.original = metrics::Confidence(original);
  r.explanation.masked = metrics::Confidence(masked);
  r.explanation.delta = metrics::prediction_change(r.explanation.original, r.explanation.masked);
  r.label = std::move(label);
  r.predicted_label = std::move(predicted);
  return r;
}

}  // namespace

// --- synthetic data ---------------------------------------------------------

TEST(Synthetic, CardinalityAndIds) {
  auto g = generate_synthetic_dataset({2, 3, 8, 8, 1, 7, 0.15}, "base", "base");
  ASSERT_EQ(g.samples.size(), 6u);
  EXPECT_EQ(g.samples.front().sample_id, "s00-000");
  EXPECT_EQ(g.samples.back().sample_id, "s01-002");
  EXPECT_EQ(g.samples.back().label, "class-1");
  EXPECT_FALSE(g.augmentation_of.has_value());
}

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
  auto a = generate_synthetic_dataset({2, 3, 8, 8, 1, 7, 0.15}, "a", "a");
  auto b = generate_synthetic_dataset({2, 3, 8, 8, 1, 7, 0.15}, "a", "a");
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(std::memcmp(a.samples[i].image.pixels().data(), b.samples[i].image.pixels().data(),
                          a.samples[i].image.pixels().size() * sizeof(double)),
              0);
  }
}

TEST(Synthetic, DifferentSeedsDifferSomewhere) {
  auto a = generate_synthetic_dataset({2, 3, 8, 8, 1, 7, 0.15}, "a", "a");
  auto b = generate_synthetic_dataset({2, 3, 8, 8, 1, 8, 0.15}, "a", "a");
  std::size_t differing = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    for (std::size_t p = 0; p < a.samples[i].image.pixels().size(); ++p)
      differing += a.samples[i].image.pixels()[p] != b.samples[i].image.pixels()[p];
  EXPECT_GT(differing, 0u);
}

TEST(Synthetic, ZeroCountsRejected) {
  EXPECT_THROW(generate_synthetic_dataset({0, 3, 8, 8, 1, 7, 0.15}, "a", "a"), Error);
  EXPECT_THROW(generate_synthetic_dataset({2, 0, 8, 8, 1, 7, 0.15}, "a", "a"), Error);
}

// --- cutmix -----------------------------------------------------------------

TEST(CutMix, QuarterAreaOnEightByEight) {
  auto r = cutmix_rect(8, 8, 0.75, 11);
  EXPECT_EQ(r.height, 4u);
  EXPECT_EQ(r.width, 4u);
  EXPECT_LE(r.row + r.height, 8u);
  EXPECT_LE(r.col + r.width, 8u);
}

TEST(CutMix, NearOneLambdaIsEmptyCut) {
  SeededRng rng(3);
  auto a = random_image(rng, 8, 8);
  auto b = random_image(rng, 8, 8);
  const double lambda = 0.999;
  auto s = cutmix(a, "cat", b, "dog", lambda, 5);
  EXPECT_EQ(s.rect.height * s.rect.width, 0u);
  EXPECT_EQ(s.image, a);
  EXPECT_DOUBLE_EQ(s.label_weights.at("cat"), lambda);
  EXPECT_DOUBLE_EQ(s.label_weights.at("dog"), 1.0 - lambda);
}

TEST(CutMix, SameLabelsMerge) {
  SeededRng rng(4);
  auto a = random_image(rng, 6, 6);
  auto b = random_image(rng, 6, 6);
  auto s = cutmix(a, "cat", b, "cat", 0.6, 1);
  ASSERT_EQ(s.label_weights.size(), 1u);
  EXPECT_DOUBLE_EQ(s.label_weights.at("cat"), 1.0);
}

TEST(CutMix, DimensionMismatch) {
  SeededRng rng(4);
  auto a = random_image(rng, 6, 6);
  auto b = random_image(rng, 6, 5);
  try {
    cutmix(a, "x", b, "y", 0.5, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(CutMix, RandomCasesMatchRecomputedRectangle) {
  SeededRng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(12);
    const std::size_t w = 1 + rng.below(12);
    const std::size_t c = rng.below(2) ? 3 : 1;
    const double lambda = 0.01 + 0.98 * rng.uniform();
    const std::uint64_t seed = rng.next_u64();
    auto a = random_image(rng, h, w, c);
    auto b = random_image(rng, h, w, c);
    auto s = cutmix(a, "a", b, "b", lambda, seed);

    // Independent recomputation of the rectangle from the seed.
    const std::size_t rh = static_cast<std::size_t>(std::llround(h * std::sqrt(1.0 - lambda)));
    const std::size_t rw = static_cast<std::size_t>(std::llround(w * std::sqrt(1.0 - lambda)));
    SeededRng pos(seed);
    const std::size_t r0 = pos.next_u64() % (h - rh + 1);
    const std::size_t c0 = pos.next_u64() % (w - rw + 1);
    ASSERT_EQ(s.rect, (CutRect{r0, c0, rh, rw}));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const bool inside = r >= r0 && r < r0 + rh && col >= c0 && col < c0 + rw;
          ASSERT_EQ(s.image.at(r, col, ch), inside ? b.at(r, col, ch) : a.at(r, col, ch));
        }
    double total = 0.0;
    for (const auto& [_, wgt] : s.label_weights) {
      EXPECT_GE(wgt, 0.0);
      EXPECT_LE(wgt, 1.0);
      total += wgt;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(CutMix, LambdaOutsideOpenIntervalRejected) {
  EXPECT_THROW(cutmix_rect(8, 8, 0.0, 1), Error);
  EXPECT_THROW(cutmix_rect(8, 8, 1.0, 1), Error);
}

TEST(CutMix, SampledLambdaIsDeterministicAndInRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const double l = sample_lambda(1.0, seed);
    EXPECT_GT(l, 0.0);
    EXPECT_LT(l, 1.0);
    EXPECT_EQ(l, sample_lambda(1.0, seed));
  }
}

TEST(CutMix, GroupCarriesParentLinkAndDominantLabels) {
  auto parent = generate_synthetic_dataset({3, 2, 8, 8, 1, 7, 0.15}, "base", "base");
  auto child = cutmix_group(parent, 0.75, 9, "base-cm", "mixed", {{"lambda", 0.75}});
  ASSERT_TRUE(child.augmentation_of);
  EXPECT_EQ(child.augmentation_of->parent_group_id, "base");
  EXPECT_EQ(child.augmentation_of->method, "cutmix");
  ASSERT_EQ(child.samples.size(), parent.samples.size());
  for (std::size_t i = 0; i < parent.samples.size(); ++i) {
    EXPECT_EQ(child.samples[i].sample_id, parent.samples[i].sample_id + "-cm");
    // lambda 0.75 keeps a as the dominant source.
    EXPECT_EQ(child.samples[i].label, parent.samples[i].label);
  }
  auto again = cutmix_group(parent, 0.75, 9, "base-cm", "mixed", {{"lambda", 0.75}});
  for (std::size_t i = 0; i < child.samples.size(); ++i) EXPECT_EQ(child.samples[i].image, again.samples[i].image);
}

// --- dataset store ----------------------------------------------------------

TEST(DatasetStore, RefusesParentDeleteWhileChildrenExist) {
  DatasetStore store;
  store.put(generate_synthetic_dataset({2, 2, 4, 4, 1, 7, 0.1}, "base", "base"));
  store.augment("base", {{"new_group_id", "base-cm"}, {"lambda", 0.75}, {"seed", 3}});
  try {
    store.remove("base");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Conflict);
  }
  store.remove("base-cm");
  store.remove("base");
  EXPECT_TRUE(store.list().empty());
}

TEST(DatasetStore, DuplicateGroupAndSampleIds) {
  DatasetStore store;
  store.put(generate_synthetic_dataset({2, 2, 4, 4, 1, 7, 0.1}, "base", "base"));
  EXPECT_THROW(store.put(generate_synthetic_dataset({2, 2, 4, 4, 1, 7, 0.1}, "base", "base")), Error);
  auto g = generate_synthetic_dataset({1, 2, 4, 4, 1, 7, 0.1}, "dup", "dup");
  g.samples[1].sample_id = g.samples[0].sample_id;
  try {
    store.put(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
  }
}

TEST(DatasetStore, AugmentUnknownParent) {
  DatasetStore store;
  try {
    store.augment("nope", {{"new_group_id", "x"}, {"lambda", 0.5}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownDataset);
  }
}

TEST(DatasetStore, SampledLambdaIsRecorded) {
  DatasetStore store;
  store.put(generate_synthetic_dataset({2, 2, 4, 4, 1, 7, 0.1}, "base", "base"));
  auto child = store.augment("base", {{"new_group_id", "mix"}, {"lambda_alpha", 1.0}, {"seed", 5}});
  ASSERT_TRUE(child.augmentation_of);
  const auto& p = child.augmentation_of->parameters;
  EXPECT_TRUE(p.contains("lambda"));
  EXPECT_DOUBLE_EQ(p["lambda"].get<double>(), sample_lambda(1.0, mix_seed(5, 0xBE7A)));
}

TEST(DatasetStore, ConcurrentReadersSeeConsistentGroups) {
  auto store = std::make_shared<DatasetStore>();
  store->put(generate_synthetic_dataset({2, 2, 4, 4, 1, 7, 0.1}, "base", "base"));
  std::vector<std::jthread> threads;
  std::atomic<int> bad{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        auto id = "g" + std::to_string(t) + "-" + std::to_string(i);
        store->put(generate_synthetic_dataset({1, 1, 2, 2, 1, 1, 0.1}, id, id));
        if (store->get("base")->samples.size() != 4) ++bad;
      }
    });
  }
  threads.clear();
  EXPECT_EQ(bad.load(), 0);
  EXPECT_EQ(store->list().size(), 101u);
}

// --- prototype model --------------------------------------------------------

TEST(Prototype, PrototypeImageIsArgmax) {
  auto model = make_prototype_model(3, 8, 8, 1, 0.05);
  for (std::size_t k = 0; k < 3; ++k) {
    auto p = prototype_predict(model, model.prototypes[k]);
    EXPECT_EQ(p.label, label_name(k));
  }
}

TEST(Prototype, EquidistantImageSplitsEvenly) {
  PrototypeModel model;
  model.labels = {"a", "b"};
  Image pa(1, 2, 1), pb(1, 2, 1), x(1, 2, 1);
  pa.set(0, 0, 0, 1.0);
  pb.set(0, 1, 0, 1.0);
  x.set(0, 0, 0, 0.5);
  x.set(0, 1, 0, 0.5);
  model.prototypes = {pa, pb};
  auto p = prototype_predict(model, x);
  EXPECT_DOUBLE_EQ(p.distribution.at("a"), 0.5);
  EXPECT_DOUBLE_EQ(p.distribution.at("b"), 0.5);
  EXPECT_EQ(p.label, "a");
}

TEST(Prototype, MatchesNaiveSoftmax) {
  SeededRng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto model = make_prototype_model(3, 5, 5, 1, 0.05 + rng.uniform());
    auto img = random_image(rng, 5, 5);
    auto p = prototype_predict(model, img);
    std::vector<double> e;
    for (const auto& proto : model.prototypes) {
      double mse = 0.0;
      for (std::size_t i = 0; i < img.pixels().size(); ++i) mse += std::pow(img.pixels()[i] - proto.pixels()[i], 2);
      mse /= static_cast<double>(img.pixels().size());
      e.push_back(std::exp(-mse / model.temperature));
    }
    const double z = std::accumulate(e.begin(), e.end(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double prob = p.distribution.at(model.labels[k]);
      EXPECT_NEAR(prob, e[k] / z, 1e-12);
      EXPECT_GE(prob, 0.0);
      total += prob;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(p.confidence, p.distribution.at(p.label));
  }
}

TEST(Prototype, DimensionMismatch) {
  auto model = make_prototype_model(3, 8, 8, 1, 0.05);
  try {
    prototype_predict(model, Image(4, 4, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

// --- xai service ------------------------------------------------------------

TEST(BuiltinXai, LinearModelWindowOneMatchesAnalyticRanking) {
  ReferenceServices ref;
  SeededRng rng(31);
  const std::string endpoint = "local://model/linear?height=6&width=6&seed=42&scale=0.005&offset=0.3";
  const auto model = make_seeded_linear_model(6, 6, 42, 0.005, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    auto img = random_image(rng, 6, 6);
    auto out = builtin_xai_explain(*ref.transport, endpoint, img, {1, 1, 0.0, 0.5});
    // Zeroing pixel i drops the score by w_i * x_i.
    std::vector<double> contrib(36);
    for (std::size_t i = 0; i < 36; ++i) contrib[i] = model.weights[i] * img.pixels()[i];
    const double peak = *std::max_element(contrib.begin(), contrib.end());
    for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(out.saliency.scores[i], contrib[i] / peak, 1e-9);
    std::vector<std::size_t> order(36);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return contrib[a] > contrib[b]; });
    for (std::size_t k = 0; k < 36; ++k) EXPECT_EQ(out.mask.keep[order[k]], k < 18);
  }
}

TEST(BuiltinXai, FullKeepFraction) {
  ReferenceServices ref;
  SeededRng rng(1);
  auto img = random_image(rng, 4, 4);
  auto out = builtin_xai_explain(*ref.transport, "local://model/prototype?labels=3", img, {2, 1, 0.0, 1.0});
  EXPECT_EQ(out.mask.kept(), 16u);
}

TEST(BuiltinXai, ConstantModelKeepsFirstPixels) {
  ReferenceServices ref;
  SeededRng rng(1);
  auto img = random_image(rng, 5, 5);
  auto out = builtin_xai_explain(*ref.transport, "local://model/constant?value=0.8", img, {2, 1, 0.0, 0.3});
  for (double s : out.saliency.scores) EXPECT_EQ(s, 0.0);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(out.mask.keep[i], i < 8) << i;
}

TEST(BuiltinXai, ErrorsCarrySampleContext) {
  ReferenceServices ref;
  SeededRng rng(1);
  auto img = random_image(rng, 3, 3);
  try {
    builtin_xai_explain(*ref.transport, "local://model/failing", img, {}, "s00-001");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelFailure);
    EXPECT_EQ(e.details().at("sample_id"), "s00-001");
  }
  try {
    builtin_xai_explain(*ref.transport, "local://model/constant", img, {2, 1, 0.0, 0.0}, "s00-002");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidFraction);
  }
}

TEST(BuiltinXai, ServiceRouteReturnsWireContract) {
  ReferenceServices ref;
  SeededRng rng(5);
  auto img = random_image(rng, 4, 4);
  auto reply = ref.transport->call("local://xai/occlusion", "POST", "/explain",
                                   {{"image", to_json(img)},
                                    {"model_endpoint", "local://model/prototype?labels=3"},
                                    {"params", {{"window", 2}, {"q", 0.25}}}});
  EXPECT_EQ(reply.at("method").at("name"), "occlusion");
  auto mask = mask_from_json(reply.at("mask"));
  EXPECT_EQ(mask.kept(), 4u);
  auto sal = saliency_from_json(reply.at("saliency"));
  EXPECT_EQ(sal.scores.size(), 16u);
  EXPECT_TRUE(reply.at("target_label").is_string());
}

// --- evaluation -------------------------------------------------------------

TEST(BuiltinEvaluate, ThreeDeltas) {
  std::vector<ExplanationRecord> recs{record("a", 1.0, 0.9), record("b", 1.0, 0.8), record("c", 1.0, 0.6)};
  auto rep = builtin_evaluate(recs, {});
  EXPECT_TRUE(rep["stability"]["available"].get<bool>());
  EXPECT_NEAR(rep["stability"]["value"].get<double>(), 0.2, 1e-9);
  EXPECT_NEAR(rep["mean_change"].get<double>(), 0.7 / 3.0, 1e-9);
  EXPECT_EQ(rep["fraction_exceeding"]["value"].get<double>(), 0.0);
  EXPECT_EQ(rep["histogram"]["total"].get<std::size_t>(), 3u);
}

TEST(BuiltinEvaluate, SingleExplanationMarksStabilityUnavailable) {
  auto rep = builtin_evaluate({record("a", 0.8, 0.4)}, {});
  EXPECT_FALSE(rep["stability"]["available"].get<bool>());
  EXPECT_EQ(rep["stability"]["reason"], "InsufficientSamples");
  EXPECT_NEAR(rep["mean_change"].get<double>(), 0.5, 1e-12);
  EXPECT_EQ(rep["histogram"]["total"].get<std::size_t>(), 1u);
}

TEST(BuiltinEvaluate, EmptyInput) {
  try {
    builtin_evaluate({}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
}

TEST(BuiltinEvaluate, SeededSetMatchesDirectRecomputation) {
  SeededRng rng(200);
  std::vector<ExplanationRecord> recs;
  const std::vector<std::string> labels{"class-0", "class-1", "class-2"};
  for (int i = 0; i < 200; ++i) {
    const double o = 0.05 + 0.95 * rng.uniform();
    const double m = rng.uniform();
    recs.push_back(record("s" + std::to_string(i), o, m, labels[rng.below(3)], labels[rng.below(3)]));
  }
  EvaluationOptions opts;
  opts.bins = 20;
  opts.range_hi = 5.0;
  opts.threshold = 0.3;
  auto rep = builtin_evaluate(recs, opts);

  metrics::ExplanationSet set{"occlusion", {}};
  std::vector<metrics::PredictionChange> deltas;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& r : recs) {
    set.explanations.push_back(r.explanation);
    deltas.push_back(r.explanation.delta);
    pairs.emplace_back(r.label, r.predicted_label);
  }
  const auto st = metrics::stability(set);
  EXPECT_EQ(rep["stability"]["value"].get<double>(), st.mean_pairwise_distance);
  EXPECT_EQ(rep["stability"]["pair_count"].get<std::size_t>(), 19900u);
  EXPECT_EQ(rep["mean_change"].get<double>(), metrics::mean_change(deltas));
  EXPECT_EQ(rep["fraction_exceeding"]["value"].get<double>(), metrics::fraction_exceeding(deltas, 0.3));
  const auto h = metrics::histogram(deltas, 20, 0.0, 5.0);
  EXPECT_EQ(rep["histogram"]["counts"].get<std::vector<std::size_t>>(), h.counts);
  EXPECT_EQ(rep["histogram"]["edges"].get<std::vector<double>>(), h.bin_edges);
  const auto q = metrics::quartiles(deltas);
  EXPECT_EQ(rep["violin"]["median"].get<double>(), q.median);
  EXPECT_EQ(rep["violin"]["q1"].get<double>(), q.q1);
  const auto macro = metrics::macro_average(metrics::count_labels(pairs));
  EXPECT_EQ(rep["classification"]["macro"]["f1"].get<double>(), macro.f1);
}

TEST(BuiltinEvaluate, ServiceRouteRoundTrip) {
  ReferenceServices ref;
  json body = {{"explanations", json::array()}, {"options", {{"threshold", 0.15}}}};
  for (const auto& r : {record("a", 1.0, 0.9), record("b", 1.0, 0.8), record("c", 1.0, 0.6)})
    body["explanations"].push_back(to_json(r));
  auto rep = ref.transport->call("local://evaluation", "POST", "/evaluate", body);
  EXPECT_NEAR(rep["fraction_exceeding"]["value"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(rep["m"], 3);
}

// --- determinism and HTTP mount ---------------------------------------------

TEST(ReferenceServices, IdenticalRequestsGiveByteIdenticalPayloads) {
  auto run = [] {
    ReferenceServices ref;
    ref.transport->call("local://dataset", "POST", "/groups/synthetic", {{"group_id", "base"}, {"labels", 2}, {"per_label", 2}});
    ref.transport->call("local://dataset", "POST", "/groups/base/augment", {{"new_group_id", "mix"}, {"lambda", 0.75}, {"seed", 1}});
    auto samples = ref.transport->call("local://dataset", "GET", "/groups/mix/samples");
    auto reply = ref.transport->call("local://xai/occlusion", "POST", "/explain",
                                     {{"image", samples["samples"][0]["image"]},
                                      {"model_endpoint", "local://model/prototype?labels=2"}});
    return canonical_dump(samples) + canonical_dump(reply);
  };
  EXPECT_EQ(run(), run());
}

TEST(ReferenceServices, HttpMountServesSameContract) {
  ReferenceServices ref;
  httplib::Server server;
  mount_local_services(server, ref.host);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port) + "/ref";
  Transport http;
  auto meta = http.call(base + "/dataset", "POST", "/groups/synthetic", {{"group_id", "base"}, {"per_label", 1}});
  EXPECT_EQ(meta["sample_count"], 3);
  auto local = ref.transport->call("local://dataset", "GET", "/groups/base/samples");
  auto remote = http.call(base + "/dataset", "GET", "/groups/base/samples");
  EXPECT_EQ(canonical_dump(local), canonical_dump(remote));

  const auto img = local["samples"][0]["image"];
  auto via_http = http.call(base + "/model/prototype?labels=3&temperature=0.1", "POST", "/predict", {{"image", img}});
  auto via_local = ref.transport->call("local://model/prototype?labels=3&temperature=0.1", "POST", "/predict", {{"image", img}});
  EXPECT_EQ(via_http, via_local);

  try {
    http.call(base + "/dataset", "GET", "/groups/missing");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownDataset);
  }
  try {
    http.call(base + "/model/failing", "POST", "/predict", {{"image", img}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelFailure);
  }
  server.stop();
  th.join();
}
