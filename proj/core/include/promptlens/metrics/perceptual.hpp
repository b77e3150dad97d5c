#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "promptlens/image.hpp"
#include "promptlens/metrics/conv_net.hpp"

namespace promptlens {

/// Where a weight file lives and the SHA-256 it must have. `location` is a
/// filesystem path or `builtin:<name>`; an empty digest accepts any content
/// (the observed digest is still reported).
struct WeightSource {
  std::string location;
  std::string digest;
};

struct LoadedWeights {
  SafeTensors tensors;
  std::string location;
  std::string digest;
};

/// Throws kWeightsUnavailable when the file is missing, malformed or does not
/// match the pinned digest.
LoadedWeights load_weights(const WeightSource& source);

/// Deterministically initialised networks shipped with the library, used when
/// no pretrained weights are configured. Names: "lpips-ref-v1", "vgg-ref-v1".
SafeTensors reference_weights(std::string_view name);
std::vector<std::string> reference_weight_names();
/// Pinned SHA-256 of each serialized reference network.
std::string_view reference_weight_digest(std::string_view name);

/// Learned perceptual image patch distance: channel-normalised activations,
/// squared differences weighted per channel, averaged spatially, summed over
/// taps.
class LpipsMetric {
 public:
  explicit LpipsMetric(const SafeTensors& weights);

  using Features = std::vector<FeatureMap>;
  Features features(const Image& image) const;
  double distance(const Features& a, const Features& b) const;
  double distance(const Image& a, const Image& b) const;

  const ConvNet& network() const noexcept { return net_; }

 private:
  ConvNet net_;
  std::vector<std::vector<float>> channel_weights_;
};

/// Feature reconstruction loss: weighted mean squared activation difference
/// over the configured taps.
class VggPerceptualMetric {
 public:
  explicit VggPerceptualMetric(const SafeTensors& weights);

  using Features = std::vector<FeatureMap>;
  Features features(const Image& image) const;
  double distance(const Features& a, const Features& b) const;
  double distance(const Image& a, const Image& b) const;

  const ConvNet& network() const noexcept { return net_; }

 private:
  ConvNet net_;
  std::vector<double> tap_weights_;
};

/// Throws kDimensionMismatch unless both images share a size of at least
/// `min_side` pixels.
void require_comparable(const Image& a, const Image& b, int min_side = 1);

}  // namespace promptlens
