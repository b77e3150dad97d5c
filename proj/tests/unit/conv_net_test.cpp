#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "promptlens/error.hpp"
#include "promptlens/metrics/conv_net.hpp"
#include "promptlens/metrics/perceptual.hpp"

using namespace promptlens;

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  const std::string text = s.str();
  return {text.begin(), text.end()};
}

struct Fixture {
  SafeTensors weights;
  nlohmann::json expected;
  Image images[2];
};

// Weights and reference activations written by tools/export_torch_weights.py
// (`fixture`), i.e. computed by torch.nn.functional.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.weights = SafeTensors::parse(read_bytes(PROMPTLENS_TEST_DATA "/convnet_fixture.safetensors"));
    std::ifstream in(PROMPTLENS_TEST_DATA "/convnet_fixture.json");
    out.expected = nlohmann::json::parse(in);
    for (int i = 0; i < 2; ++i) {
      out.images[i] = Image(out.expected["width"], out.expected["height"]);
      const auto pixels = out.expected["images"][i].get<std::vector<int>>();
      for (std::size_t k = 0; k < pixels.size(); ++k) out.images[i].rgb[k] = static_cast<std::uint8_t>(pixels[k]);
    }
    return out;
  }();
  return f;
}

}  // namespace

TEST(ConvNet, MatchesTorchActivations) {
  const ConvNet net = ConvNet::from_safetensors(fixture().weights);
  ASSERT_EQ(net.tap_count(), 2u);
  for (int i = 0; i < 2; ++i) {
    const auto taps = net.forward(fixture().images[i]);
    ASSERT_EQ(taps.size(), 2u);
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const auto& ref = fixture().expected["taps"][i][t];
      const auto shape = ref["shape"].get<std::vector<int>>();
      EXPECT_EQ(taps[t].channels, shape[0]);
      EXPECT_EQ(taps[t].height, shape[1]);
      EXPECT_EQ(taps[t].width, shape[2]);
      const auto values = ref["values"].get<std::vector<double>>();
      ASSERT_EQ(values.size(), taps[t].data.size());
      double worst = 0.0;
      for (std::size_t k = 0; k < values.size(); ++k) worst = std::max(worst, std::fabs(values[k] - taps[t].data[k]));
      EXPECT_LT(worst, 1e-4) << "image " << i << " tap " << t;
    }
  }
}

TEST(ConvNet, LpipsDistanceMatchesTorch) {
  const LpipsMetric lpips(fixture().weights);
  EXPECT_NEAR(lpips.distance(fixture().images[0], fixture().images[1]),
              fixture().expected["lpips_distance"].get<double>(), 1e-5);
}

TEST(SafeTensors, SerializeParseRoundTrip) {
  const auto bytes = fixture().weights.serialize();
  const SafeTensors back = SafeTensors::parse(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.at("features.0.weight").shape, (std::vector<std::int64_t>{4, 3, 3, 3}));
  EXPECT_THROW(back.at("missing"), Error);
}

TEST(SafeTensors, RejectsMalformed) {
  std::vector<std::uint8_t> bad = {0xff, 0xff, 0, 0, 0, 0, 0, 0, '{', '}'};
  EXPECT_THROW(SafeTensors::parse(bad), Error);
  std::vector<std::uint8_t> truncated = fixture().weights.serialize();
  truncated.resize(truncated.size() - 4);
  EXPECT_THROW(SafeTensors::parse(truncated), Error);
}

TEST(ConvNet, RejectsMissingArch) {
  SafeTensors st = fixture().weights;
  st.metadata.erase("promptlens.arch");
  try {
    ConvNet::from_safetensors(st);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kWeightsUnavailable);
  }
}

TEST(ConvNet, ReferenceNetworksBuild) {
  for (const auto& name : reference_weight_names()) {
    const ConvNet net = ConvNet::from_safetensors(reference_weights(name));
    EXPECT_GE(net.tap_count(), 3u);
    EXPECT_GE(net.min_input_size(), 1);
  }
}
