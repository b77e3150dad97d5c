#include <cmath>

#include <nlohmann/json.hpp>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/metrics/perceptual.hpp"

namespace promptlens {

namespace {

// Output scaling chosen so that two unrelated synthetic images sit near a
// distance of 0.7 on both networks.
constexpr double kLpipsLinScale = 22.0;
constexpr double kVggTapScale = 1.6;

struct ConvShape {
  const char* name;
  int in;
  int out;
};

Tensor uniform_tensor(std::vector<std::int64_t> shape, double bound, const std::string& key) {
  Tensor t;
  t.shape = std::move(shape);
  t.values.resize(static_cast<std::size_t>(t.numel()));
  CounterRng rng(fnv1a64(key));
  for (float& v : t.values) v = static_cast<float>(bound * rng.next_symmetric());
  return t;
}

void add_conv(SafeTensors& st, const ConvShape& conv, const std::string& net) {
  const double fan_in = conv.in * 9.0;
  st.tensors[std::string(conv.name) + ".weight"] =
      uniform_tensor({conv.out, conv.in, 3, 3}, std::sqrt(6.0 / fan_in), net + "/" + conv.name);
  Tensor bias;
  bias.shape = {conv.out};
  bias.values.assign(static_cast<std::size_t>(conv.out), 0.0f);
  st.tensors[std::string(conv.name) + ".bias"] = std::move(bias);
}

nlohmann::json conv_layer(const char* name) {
  return {{"op", "conv"}, {"name", name}, {"stride", 1}, {"padding", 1}};
}

SafeTensors lpips_reference() {
  const std::vector<ConvShape> convs = {
      {"features.0", 3, 16}, {"features.3", 16, 32}, {"features.6", 32, 48}, {"features.9", 48, 64}};
  SafeTensors st;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < convs.size(); ++i) {
    add_conv(st, convs[i], "lpips-ref-v1");
    if (i > 0) layers.push_back({{"op", "maxpool"}, {"kernel", 2}, {"stride", 2}});
    layers.push_back(conv_layer(convs[i].name));
    layers.push_back({{"op", "relu"}});
    layers.push_back({{"op", "tap"}, {"name", "relu" + std::to_string(i + 1)}});

    const int channels = convs[i].out;
    Tensor lin;
    lin.shape = {1, channels, 1, 1};
    lin.values.resize(static_cast<std::size_t>(channels));
    CounterRng rng(fnv1a64("lpips-ref-v1/lin" + std::to_string(i)));
    for (float& v : lin.values) {
      v = static_cast<float>(kLpipsLinScale * (0.5 + rng.next_unit()) / (channels * static_cast<double>(convs.size())));
    }
    st.tensors["lin" + std::to_string(i) + ".weight"] = std::move(lin);
  }
  const nlohmann::json arch{{"kind", "lpips"},
                            {"input", "signed"},
                            {"shift", {-0.030, -0.088, -0.188}},
                            {"scale", {0.458, 0.448, 0.450}},
                            {"layers", layers}};
  st.metadata["promptlens.arch"] = arch.dump();
  st.metadata["promptlens.name"] = "lpips-ref-v1";
  return st;
}

SafeTensors vgg_reference() {
  SafeTensors st;
  const std::vector<ConvShape> convs = {{"features.0", 3, 16},  {"features.2", 16, 16}, {"features.5", 16, 32},
                                        {"features.7", 32, 32}, {"features.10", 32, 64}};
  for (const auto& conv : convs) add_conv(st, conv, "vgg-ref-v1");
  const nlohmann::json layers = nlohmann::json::array({
      conv_layer("features.0"), {{"op", "relu"}}, conv_layer("features.2"), {{"op", "relu"}},
      {{"op", "tap"}, {"name", "relu1_2"}}, {{"op", "maxpool"}, {"kernel", 2}, {"stride", 2}},
      conv_layer("features.5"), {{"op", "relu"}}, conv_layer("features.7"), {{"op", "relu"}},
      {{"op", "tap"}, {"name", "relu2_2"}}, {{"op", "maxpool"}, {"kernel", 2}, {"stride", 2}},
      conv_layer("features.10"), {{"op", "relu"}}, {{"op", "tap"}, {"name", "relu3_1"}},
  });
  const nlohmann::json arch{{"kind", "vgg_perceptual"},
                            {"input", "unit"},
                            {"shift", {0.485, 0.456, 0.406}},
                            {"scale", {0.229, 0.224, 0.225}},
                            {"layers", layers},
                            {"tap_weights", {kVggTapScale, kVggTapScale, kVggTapScale}}};
  st.metadata["promptlens.arch"] = arch.dump();
  st.metadata["promptlens.name"] = "vgg-ref-v1";
  return st;
}

}  // namespace

SafeTensors reference_weights(std::string_view name) {
  if (name == "lpips-ref-v1") return lpips_reference();
  if (name == "vgg-ref-v1") return vgg_reference();
  throw Error(ErrorCode::kWeightsUnavailable, "no builtin weights named '" + std::string(name) + "'");
}

std::vector<std::string> reference_weight_names() { return {"lpips-ref-v1", "vgg-ref-v1"}; }

std::string_view reference_weight_digest(std::string_view name) {
  if (name == "lpips-ref-v1") return "928e05996c6c5144b4a4525fc7689bd5aac04880382d410cd3816a6a0c714ff7";
  if (name == "vgg-ref-v1") return "c45b95d192b59f86ba3349983e674242964ad7a0b9dfc08dbff4c864616a0f62";
  throw Error(ErrorCode::kWeightsUnavailable, "no builtin weights named '" + std::string(name) + "'");
}

}  // namespace promptlens
