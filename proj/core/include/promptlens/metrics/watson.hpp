#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptlens/image.hpp"

namespace promptlens {

/// Constants for the frequency-masking distance. Defaults ship in
/// data/watson_dft.json and are compiled into the library.
struct WatsonConfig {
  int block_size = 8;
  double luminance_masking_exponent = 0.649;
  double contrast_masking_exponent = 0.7;
  double pooling_exponent = 4.0;
  double phase_weight = 0.2;
  double dc_floor = 1.0;
  double output_scale = 1.0;
  std::vector<double> thresholds;  // block_size x block_size, row-major by (u, v)

  static WatsonConfig defaults();
  /// Throws kInvalidConfig.
  static WatsonConfig from_json(const nlohmann::json& j);
  static WatsonConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Watson-style perceptual distance on block DFTs of the luminance channel.
///
/// Per block, the threshold of each frequency is scaled by the block's DC
/// amplitude relative to the image mean (luminance masking), then raised to
/// max(t, |c|^w t^(1-w)) (contrast masking). The mask is the mean of both
/// images' masks, which keeps the distance symmetric. Amplitude and
/// amplitude-weighted phase differences, divided by the mask, are pooled with
/// a Minkowski mean.
class WatsonDftMetric {
 public:
  explicit WatsonDftMetric(WatsonConfig config = WatsonConfig::defaults());

  double distance(const Image& a, const Image& b) const;
  const WatsonConfig& config() const noexcept { return config_; }

 private:
  WatsonConfig config_;
};

}  // namespace promptlens
