#include "promptlens/metrics/perceptual.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"

namespace promptlens {

namespace {

constexpr std::string_view kBuiltinPrefix = "builtin:";

void check_features(const std::vector<FeatureMap>& a, const std::vector<FeatureMap>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimensionMismatch, "feature tap count differs");
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (a[l].channels != b[l].channels || a[l].height != b[l].height || a[l].width != b[l].width) {
      throw Error(ErrorCode::kDimensionMismatch, "feature shapes differ at tap " + std::to_string(l));
    }
  }
}

}  // namespace

void require_comparable(const Image& a, const Image& b, int min_side) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::kDimensionMismatch, "images are " + std::to_string(a.width) + "x" +
                                                   std::to_string(a.height) + " and " + std::to_string(b.width) +
                                                   "x" + std::to_string(b.height));
  }
  if (a.width < min_side || a.height < min_side) {
    throw Error(ErrorCode::kDimensionMismatch,
                "images must be at least " + std::to_string(min_side) + " pixels on each side");
  }
}

LoadedWeights load_weights(const WeightSource& source) {
  std::vector<std::uint8_t> bytes;
  if (source.location.starts_with(kBuiltinPrefix)) {
    bytes = reference_weights(std::string_view(source.location).substr(kBuiltinPrefix.size())).serialize();
  } else {
    std::ifstream in(source.location, std::ios::binary);
    if (!in) throw Error(ErrorCode::kWeightsUnavailable, "cannot open weights file " + source.location);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    bytes.assign(text.begin(), text.end());
  }
  LoadedWeights loaded;
  loaded.location = source.location;
  loaded.digest = sha256_hex(bytes);
  if (!source.digest.empty() && source.digest != loaded.digest) {
    throw Error(ErrorCode::kWeightsUnavailable,
                "weights " + source.location + " have digest " + loaded.digest + ", expected " + source.digest);
  }
  try {
    loaded.tensors = SafeTensors::parse(bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::kWeightsUnavailable, "weights " + source.location + ": " + e.what());
  }
  return loaded;
}

LpipsMetric::LpipsMetric(const SafeTensors& weights) : net_(ConvNet::from_safetensors(weights)) {
  if (net_.kind() != "lpips") throw Error(ErrorCode::kWeightsUnavailable, "weights are not an lpips network");
  for (std::size_t l = 0; l < net_.tap_count(); ++l) {
    channel_weights_.push_back(weights.at("lin" + std::to_string(l) + ".weight").values);
  }
}

LpipsMetric::Features LpipsMetric::features(const Image& image) const {
  if (image.width < net_.min_input_size() || image.height < net_.min_input_size()) {
    throw Error(ErrorCode::kDimensionMismatch, "image smaller than the lpips network's receptive stride");
  }
  Features taps = net_.forward(image);
  for (std::size_t l = 0; l < taps.size(); ++l) {
    FeatureMap& f = taps[l];
    if (static_cast<int>(channel_weights_[l].size()) != f.channels) {
      throw Error(ErrorCode::kWeightsUnavailable, "lin" + std::to_string(l) + " size mismatch");
    }
    const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
    for (std::size_t p = 0; p < plane; ++p) {
      double norm = 0.0;
      for (int c = 0; c < f.channels; ++c) norm += static_cast<double>(f.channel(c)[p]) * f.channel(c)[p];
      const float inv = static_cast<float>(1.0 / (std::sqrt(norm) + 1e-10));
      for (int c = 0; c < f.channels; ++c) f.channel(c)[p] *= inv;
    }
  }
  return taps;
}

double LpipsMetric::distance(const Features& a, const Features& b) const {
  check_features(a, b);
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const std::size_t plane = static_cast<std::size_t>(a[l].height) * a[l].width;
    double layer = 0.0;
    for (int c = 0; c < a[l].channels; ++c) {
      const float* pa = a[l].channel(c);
      const float* pb = b[l].channel(c);
      double channel = 0.0;
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = static_cast<double>(pa[p]) - pb[p];
        channel += d * d;
      }
      layer += channel_weights_[l][static_cast<std::size_t>(c)] * channel;
    }
    total += layer / static_cast<double>(plane);
  }
  return total;
}

double LpipsMetric::distance(const Image& a, const Image& b) const {
  require_comparable(a, b, net_.min_input_size());
  return distance(features(a), features(b));
}

VggPerceptualMetric::VggPerceptualMetric(const SafeTensors& weights) : net_(ConvNet::from_safetensors(weights)) {
  if (net_.kind() != "vgg_perceptual") {
    throw Error(ErrorCode::kWeightsUnavailable, "weights are not a vgg_perceptual network");
  }
  tap_weights_ = net_.arch().value("tap_weights", std::vector<double>(net_.tap_count(), 1.0));
  if (tap_weights_.size() != net_.tap_count()) {
    throw Error(ErrorCode::kWeightsUnavailable, "tap_weights length differs from tap count");
  }
}

VggPerceptualMetric::Features VggPerceptualMetric::features(const Image& image) const {
  if (image.width < net_.min_input_size() || image.height < net_.min_input_size()) {
    throw Error(ErrorCode::kDimensionMismatch, "image smaller than the vgg network's receptive stride");
  }
  return net_.forward(image);
}

double VggPerceptualMetric::distance(const Features& a, const Features& b) const {
  check_features(a, b);
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a[l].data.size(); ++i) {
      const double d = static_cast<double>(a[l].data[i]) - b[l].data[i];
      sum += d * d;
    }
    total += tap_weights_[l] * sum / static_cast<double>(a[l].data.size());
  }
  return total;
}

double VggPerceptualMetric::distance(const Image& a, const Image& b) const {
  require_comparable(a, b, net_.min_input_size());
  return distance(features(a), features(b));
}

}  // namespace promptlens
