#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/metrics/cosine.hpp"
#include "promptlens/metrics/metric_suite.hpp"
#include "promptlens/synthetic_backend.hpp"
#include "support.hpp"

using namespace promptlens;

namespace {

constexpr std::array<MetricId, 3> kImageMetrics = {MetricId::kLpips, MetricId::kVggPerceptual, MetricId::kWatsonDft};

const MetricSuite& suite() {
  static const MetricSuite s;
  return s;
}

// Independent oracle: long-double accumulation, no clamping.
long double naive_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  long double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<long double>(u[i]) * v[i];
    nu += static_cast<long double>(u[i]) * u[i];
    nv += static_cast<long double>(v[i]) * v[i];
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no promptlens::Error thrown";
  return ErrorCode::kIoError;
}

}  // namespace

TEST(MetricId, NamesAndOrientation) {
  for (MetricId m : kAllMetrics) EXPECT_EQ(metric_from_string(to_string(m)), m);
  EXPECT_EQ(to_string(MetricId::kClipFlatCosine), "clip_flat_cosine");
  EXPECT_EQ(native_orientation(MetricId::kLpips), Orientation::kDistance);
  EXPECT_EQ(native_orientation(MetricId::kSbertCosine), Orientation::kSimilarity);
  EXPECT_EQ(parse_metric("psnr"), std::nullopt);
  EXPECT_THROW(metric_from_string("psnr"), Error);
}

TEST(ToSimilarity, Convention) {
  const MetricScore d{MetricId::kLpips, 0.336, Orientation::kDistance};
  const MetricScore s = to_similarity(d);
  EXPECT_NEAR(s.value, 0.664, 1e-12);
  EXPECT_EQ(s.orientation, Orientation::kSimilarity);
  EXPECT_EQ(to_similarity({MetricId::kLpips, 0.0, Orientation::kDistance}).value, 1.0);
  EXPECT_NEAR(to_distance(s).value, 0.336, 1e-12);
  EXPECT_LT(to_similarity({MetricId::kLpips, 1.25, Orientation::kDistance}).value, 0.0);
  EXPECT_THROW(to_similarity(s), Error);
  EXPECT_THROW(to_distance(d), Error);
  EXPECT_EQ(as_similarity(s), s);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double a = u(rng), b = u(rng);
    if (a == b) continue;
    const double sa = to_similarity({MetricId::kVggPerceptual, a, Orientation::kDistance}).value;
    const double sb = to_similarity({MetricId::kVggPerceptual, b, Orientation::kDistance}).value;
    EXPECT_EQ(a < b, sa > sb);
  }
}

TEST(MetricScore, JsonRoundTrip) {
  const MetricScore s{MetricId::kWatsonDft, 0.125, Orientation::kDistance};
  const nlohmann::json j = s;
  EXPECT_EQ(j.at("metric"), "watson_dft");
  EXPECT_EQ(j.at("orientation"), "distance");
  EXPECT_EQ(j.get<MetricScore>(), s);
}

TEST(Cosine, Examples) {
  const std::vector<double> u = {1, 2, 2}, v = {2, 1, 2}, neg = {-1, -2, -2};
  EXPECT_NEAR(cosine_similarity(u, v), 8.0 / 9.0, 1e-15);
  EXPECT_DOUBLE_EQ(cosine_similarity(u, u), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(u, neg), -1.0);
  const std::vector<double> zero = {0, 0, 0}, short_v = {1, 2};
  EXPECT_EQ(code_of([&] { cosine_similarity(u, zero); }), ErrorCode::kZeroVector);
  EXPECT_EQ(code_of([&] { cosine_similarity(u, short_v); }), ErrorCode::kDimensionMismatch);
}

TEST(Cosine, MatchesHighPrecisionOracle) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng() % 2000;
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = g(rng) * std::pow(10.0, static_cast<double>(rng() % 7) - 3.0);
    for (auto& x : v) x = g(rng);
    const double c = cosine_similarity(u, v);
    worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(c) - naive_cosine(u, v))));
    EXPECT_LE(std::fabs(c), 1.0 + 1e-12);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Cosine, ScaleInvariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> u(64), v(64);
    for (auto& x : u) x = g(rng);
    for (auto& x : v) x = g(rng);
    const double a = scale(rng), b = scale(rng);
    std::vector<double> su = u, sv = v;
    for (auto& x : su) x *= a;
    for (auto& x : sv) x *= b;
    EXPECT_NEAR(cosine_similarity(su, sv), cosine_similarity(u, v), 1e-9);
  }
}

TEST(Cosine, FloatOverloadAgrees) {
  const std::vector<float> u = {1, 2, 2}, v = {2, 1, 2};
  EXPECT_NEAR(cosine_similarity(u, v), 8.0 / 9.0, 1e-7);
}

TEST(ImageMetrics, IdentitySymmetryNonNegativity) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 12; ++t) {
    const Image a = t % 2 ? testing_support::random_image(rng, 64, 64) : testing_support::smooth_image(rng, 64, 64);
    const Image b = testing_support::smooth_image(rng, 64, 64);
    for (MetricId m : kImageMetrics) {
      const MetricScore ab = suite().image_distance(a, b, m);
      const MetricScore ba = suite().image_distance(b, a, m);
      EXPECT_EQ(ab.orientation, Orientation::kDistance);
      EXPECT_EQ(ab.value, ba.value) << to_string(m);
      EXPECT_GT(ab.value, 0.0) << to_string(m);
      EXPECT_LE(std::fabs(suite().image_distance(a, a, m).value), 1e-6) << to_string(m);
    }
  }
}

TEST(ImageMetrics, RecordAndImagePathsAgree) {
  std::mt19937_64 rng(5);
  const ImageRecord a = make_record(testing_support::smooth_image(rng, 64, 64), {}, "a");
  const ImageRecord b = make_record(testing_support::smooth_image(rng, 64, 64), {}, "b");
  for (MetricId m : kImageMetrics) {
    EXPECT_DOUBLE_EQ(suite().image_distance(a, b, m).value, suite().image_distance(a.image(), b.image(), m).value);
    // Cached features give the same answer regardless of retrieval order.
    EXPECT_DOUBLE_EQ(suite().image_distance(b, a, m).value, suite().image_distance(a, b, m).value);
  }
}

TEST(ImageMetrics, Errors) {
  std::mt19937_64 rng(5);
  const Image a = testing_support::smooth_image(rng, 64, 64);
  const Image b = testing_support::smooth_image(rng, 64, 48);
  for (MetricId m : kImageMetrics) {
    EXPECT_EQ(code_of([&] { suite().image_distance(a, b, m); }), ErrorCode::kDimensionMismatch);
  }
  EXPECT_EQ(code_of([&] { suite().image_distance(a, a, MetricId::kClipFlatCosine); }), ErrorCode::kInvalidArgument);
  const Image tiny(4, 4);
  EXPECT_EQ(code_of([&] { suite().image_distance(tiny, tiny, MetricId::kWatsonDft); }),
            ErrorCode::kDimensionMismatch);
}

TEST(ImageMetrics, OrderSyntheticWeights) {
  auto profile = SyntheticEffectProfile::defaults();
  profile.vocabulary["lightly"] = ModifierCategory::kDescriptor;
  profile.vocabulary["heavily"] = ModifierCategory::kNoun;
  profile.overrides["lightly"] = 0.1;
  profile.overrides["heavily"] = 0.6;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GenerationSpec spec;
    spec.seed = seed;
    spec.width = spec.height = 96;
    const Image base = synthetic_generate(spec, "A cat", profile);
    const Image light = synthetic_generate(spec, "A cat, lightly", profile);
    const Image heavy = synthetic_generate(spec, "A cat, heavily", profile);
    for (MetricId m : kImageMetrics) {
      EXPECT_LT(suite().image_distance(base, light, m).value, suite().image_distance(base, heavy, m).value)
          << to_string(m);
    }
  }
}

TEST(Weights, BuiltinDigestsArePinned) {
  for (const auto& name : reference_weight_names()) {
    const auto bytes = reference_weights(name).serialize();
    EXPECT_EQ(sha256_hex(bytes), reference_weight_digest(name)) << name;
    const auto loaded = load_weights({"builtin:" + name, std::string(reference_weight_digest(name))});
    EXPECT_EQ(loaded.digest, reference_weight_digest(name));
  }
  EXPECT_EQ(reference_weight_digest("lpips-ref-v1"),
            "928e05996c6c5144b4a4525fc7689bd5aac04880382d410cd3816a6a0c714ff7");
}

TEST(Weights, DigestMismatchAndMissingFile) {
  EXPECT_EQ(code_of([] { load_weights({"builtin:lpips-ref-v1", std::string(64, '0')}); }),
            ErrorCode::kWeightsUnavailable);
  EXPECT_EQ(code_of([] { load_weights({"/nonexistent/weights.safetensors", ""}); }), ErrorCode::kWeightsUnavailable);

  testing_support::TempDir dir;
  std::ofstream(dir / "junk.safetensors") << "not a tensor file";
  EXPECT_EQ(code_of([&] { load_weights({(dir / "junk.safetensors").string(), ""}); }),
            ErrorCode::kWeightsUnavailable);

  MetricSuiteConfig cfg;
  cfg.lpips = {"/nonexistent/weights.safetensors", ""};
  const MetricSuite broken(cfg);
  Image img(64, 64);
  EXPECT_EQ(code_of([&] { broken.image_distance(img, img, MetricId::kLpips); }), ErrorCode::kWeightsUnavailable);
  EXPECT_NO_THROW(broken.image_distance(img, img, MetricId::kWatsonDft));
}

TEST(Weights, FileRoundTrip) {
  testing_support::TempDir dir;
  const auto bytes = reference_weights("vgg-ref-v1").serialize();
  std::ofstream(dir / "vgg.safetensors", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  MetricSuiteConfig cfg;
  cfg.vgg = {(dir / "vgg.safetensors").string(), std::string(reference_weight_digest("vgg-ref-v1"))};
  const MetricSuite from_file(cfg);
  std::mt19937_64 rng(3);
  const Image a = testing_support::smooth_image(rng, 64, 64), b = testing_support::smooth_image(rng, 64, 64);
  EXPECT_EQ(from_file.image_distance(a, b, MetricId::kVggPerceptual).value,
            suite().image_distance(a, b, MetricId::kVggPerceptual).value);
  const auto prov = from_file.provenance({MetricId::kVggPerceptual});
  EXPECT_NE(prov.dump().find(std::string(reference_weight_digest("vgg-ref-v1"))), std::string::npos);
}

TEST(Watson, ConfigRoundTripAndValidation) {
  const WatsonConfig d = WatsonConfig::defaults();
  EXPECT_EQ(d.block_size, 8);
  EXPECT_EQ(d.thresholds.size(), 64u);
  const WatsonConfig back = WatsonConfig::from_json(d.to_json());
  EXPECT_EQ(back.to_json(), d.to_json());

  auto j = d.to_json();
  j["thresholds"] = std::vector<double>(10, 1.0);
  EXPECT_EQ(code_of([&] { WatsonConfig::from_json(j); }), ErrorCode::kInvalidConfig);
  j = d.to_json();
  j["pooling_exponent"] = -1.0;
  EXPECT_EQ(code_of([&] { WatsonConfig::from_json(j); }), ErrorCode::kInvalidConfig);

  EXPECT_EQ(WatsonConfig::load(PROMPTLENS_TEST_DATA "/../../data/watson_dft.json").to_json(), d.to_json());
}

TEST(Watson, UniformShiftCostsLessThanStructure) {
  std::mt19937_64 rng(1);
  const Image a = testing_support::smooth_image(rng, 64, 64);
  Image brighter = a;
  for (auto& v : brighter.rgb) v = static_cast<std::uint8_t>(std::min(255, v + 4));
  const Image noisy = [&] {
    Image n = a;
    std::normal_distribution<double> g(0.0, 4.0);
    for (auto& v : n.rgb) v = static_cast<std::uint8_t>(std::clamp(v + g(rng), 0.0, 255.0));
    return n;
  }();
  const WatsonDftMetric w;
  EXPECT_LT(w.distance(a, brighter), w.distance(a, noisy));
}

TEST(TextEmbedding, ShapeDeterminismAndPadding) {
  const EmbeddingMatrix m = suite().text_embedding("A cat, minimalist");
  EXPECT_EQ(m.rows, 77);
  EXPECT_EQ(m.cols, 768);
  EXPECT_EQ(m.values.size(), 77u * 768u);
  EXPECT_EQ(suite().text_embedding("A cat, minimalist").values, m.values);
  const EmbeddingMatrix empty = suite().text_embedding("");
  EXPECT_EQ(empty.rows, 77);
  EXPECT_EQ(empty.values.size(), 77u * 768u);

  std::string long_prompt = "w";
  for (int i = 0; i < 80; ++i) long_prompt += " w";
  EXPECT_EQ(code_of([&] { suite().text_embedding(long_prompt); }), ErrorCode::kTokenBudgetExceeded);
}

TEST(TextSimilarity, IdentityAndSymmetry) {
  const std::vector<std::string> prompts = {"A cat", "A cat, minimalist", "A city street at night, neon glow",
                                            "A portrait of a woman in the style of Claude Monet", ""};
  for (MetricId m : {MetricId::kClipFlatCosine, MetricId::kSbertCosine}) {
    for (const auto& a : prompts) {
      if (!a.empty()) {
        EXPECT_NEAR(suite().text_similarity(a, a, m).value, 1.0, 1e-6);
      }
      for (const auto& b : prompts) {
        if (a.empty() || b.empty()) continue;
        const MetricScore ab = suite().text_similarity(a, b, m);
        EXPECT_EQ(ab.value, suite().text_similarity(b, a, m).value);
        EXPECT_EQ(ab.orientation, Orientation::kSimilarity);
        EXPECT_LE(std::fabs(ab.value), 1.0 + 1e-12);
      }
    }
  }
  EXPECT_EQ(code_of([] { suite().text_similarity("a", "b", MetricId::kLpips); }), ErrorCode::kInvalidArgument);
}

TEST(TextSimilarity, FlatteningConsistency) {
  const HashedClipEncoder encoder;
  for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{
           {"A cat", "A cat, minimalist"}, {"A cat", "A dog in the style of Frida Kahlo"}, {"x", "y, z"}}) {
    const EmbeddingMatrix ea = encoder.encode(a), eb = encoder.encode(b);
    std::vector<double> fa, fb;
    for (int r = 0; r < ea.rows; ++r) {
      for (float x : ea.row(r)) fa.push_back(x);
      for (float x : eb.row(r)) fb.push_back(x);
    }
    ASSERT_EQ(fa.size(), 59136u);
    EXPECT_NEAR(suite().text_similarity(a, b, MetricId::kClipFlatCosine).value, static_cast<double>(naive_cosine(fa, fb)),
                1e-9);
  }
}

TEST(TextSimilarity, DescriptorCloserThanArtist) {
  const double descriptor = suite().text_similarity("A cat", "A cat, minimalist", MetricId::kClipFlatCosine).value;
  const double artist =
      suite().text_similarity("A cat", "A cat, in the style of Leonardo da Vinci", MetricId::kClipFlatCosine).value;
  EXPECT_GT(descriptor, artist);
}

TEST(TextSimilarity, SentenceEncoderIsUnitNorm) {
  const HashedSentenceEncoder encoder;
  const auto v = encoder.encode("A portrait of a woman, golden hour");
  EXPECT_EQ(v.size(), static_cast<std::size_t>(kSentenceWidth));
  double n = 0.0;
  for (float x : v) n += static_cast<double>(x) * x;
  EXPECT_NEAR(n, 1.0, 1e-5);
}

TEST(MetricSuite, ScorePairUsesNativeOrientation) {
  std::mt19937_64 rng(8);
  const ImageRecord a = make_record(testing_support::smooth_image(rng, 64, 64), {}, "A cat");
  const ImageRecord b = make_record(testing_support::smooth_image(rng, 64, 64), {}, "A cat, minimalist");
  const auto scores = suite().score_pair(a, b, {kAllMetrics.begin(), kAllMetrics.end()});
  ASSERT_EQ(scores.size(), 5u);
  for (const auto& [m, s] : scores) {
    EXPECT_EQ(s.metric, m);
    EXPECT_EQ(s.orientation, native_orientation(m));
  }
  EXPECT_EQ(scores.at(MetricId::kClipFlatCosine).value,
            suite().text_similarity("A cat", "A cat, minimalist", MetricId::kClipFlatCosine).value);
}

TEST(MetricSuite, ConfigJsonRoundTrip) {
  MetricSuiteConfig c;
  c.lpips = {"/w/lpips.safetensors", "abc"};
  c.text_encoders = "http";
  c.adapter_url = "http://127.0.0.1:9";
  const auto back = MetricSuiteConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(MetricSuite, HttpEncodersReportUnavailable) {
  MetricSuiteConfig c;
  c.text_encoders = "http";
  c.adapter_url = "http://127.0.0.1:9";
  const MetricSuite s(c);
  EXPECT_EQ(code_of([&] { s.text_similarity("a", "b", MetricId::kClipFlatCosine); }),
            ErrorCode::kEncoderUnavailable);
}
