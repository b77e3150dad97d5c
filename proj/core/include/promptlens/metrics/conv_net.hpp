#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/image.hpp"

namespace promptlens {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t numel() const noexcept;
};

/// Minimal safetensors container (F32 tensors only): an 8-byte little-endian
/// header length, a JSON header, then the raw tensor bytes.
struct SafeTensors {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;

  /// Throws kParseError.
  static SafeTensors parse(std::span<const std::uint8_t> bytes);
  /// Byte-stable: tensors are laid out in name order.
  std::vector<std::uint8_t> serialize() const;

  const Tensor& at(const std::string& name) const;
};

/// CHW activations.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float* channel(int c) noexcept { return data.data() + static_cast<std::size_t>(c) * height * width; }
  const float* channel(int c) const noexcept { return data.data() + static_cast<std::size_t>(c) * height * width; }
};

/// Sequential conv/relu/maxpool network whose topology is described by the
/// `promptlens.arch` metadata entry:
///
///   {"kind": "lpips" | "vgg_perceptual",
///    "input": "signed" | "unit",          // x/127.5 - 1 or x/255
///    "shift": [3], "scale": [3],          // x' = (x - shift) / scale
///    "layers": [{"op": "conv", "name": "features.0", "stride": 1, "padding": 1},
///               {"op": "relu"}, {"op": "maxpool", "kernel": 2, "stride": 2},
///               {"op": "tap", "name": "relu1_2"}, ...],
///    "tap_weights": [...]}                // vgg_perceptual only
///
/// Conv weights are `<name>.weight` [out, in, kh, kw] and `<name>.bias` [out].
class ConvNet {
 public:
  /// Throws kWeightsUnavailable when the metadata or tensors are malformed.
  static ConvNet from_safetensors(const SafeTensors& weights);

  std::vector<FeatureMap> forward(const Image& image) const;

  const nlohmann::json& arch() const noexcept { return arch_; }
  std::string kind() const { return arch_.value("kind", ""); }
  std::size_t tap_count() const noexcept { return tap_count_; }
  /// Smallest input side that survives every downsampling layer.
  int min_input_size() const noexcept { return min_input_; }

 private:
  struct Layer {
    enum class Op { kConv, kRelu, kMaxPool, kTap } op = Op::kRelu;
    int kernel_h = 0, kernel_w = 0, stride = 1, padding = 0;
    int in_channels = 0, out_channels = 0;
    std::vector<float> weight;  // [out, in * kh * kw]
    std::vector<float> bias;
  };

  nlohmann::json arch_;
  std::vector<Layer> layers_;
  float shift_[3] = {0, 0, 0};
  float scale_[3] = {1, 1, 1};
  bool signed_input_ = true;
  std::size_t tap_count_ = 0;
  int min_input_ = 1;
};

}  // namespace promptlens
