#include "promptlens/metrics/watson.hpp"

#include <cmath>
#include <complex>
#include <fstream>

#include <opencv2/core.hpp>

#include "builtin_data.hpp"
#include "promptlens/error.hpp"
#include "promptlens/metrics/perceptual.hpp"

namespace promptlens {

namespace {

using Complex = std::complex<double>;

struct BlockSpectra {
  int blocks_x = 0;
  int blocks_y = 0;
  std::vector<Complex> coeffs;  // [block][u][v]
};

BlockSpectra block_dft(const Image& image, int n) {
  BlockSpectra out;
  out.blocks_x = image.width / n;
  out.blocks_y = image.height / n;
  const std::size_t per_block = static_cast<std::size_t>(n) * n;
  out.coeffs.resize(per_block * out.blocks_x * out.blocks_y);

  cv::Mat luma(n, n, CV_64F);
  cv::Mat spectrum;
  for (int by = 0; by < out.blocks_y; ++by) {
    for (int bx = 0; bx < out.blocks_x; ++bx) {
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const std::uint8_t* px = image.at(bx * n + x, by * n + y);
          luma.at<double>(y, x) = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        }
      }
      cv::dft(luma, spectrum, cv::DFT_COMPLEX_OUTPUT);
      Complex* dst = &out.coeffs[(static_cast<std::size_t>(by) * out.blocks_x + bx) * per_block];
      for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
          const auto& c = spectrum.at<cv::Vec2d>(u, v);
          dst[static_cast<std::size_t>(u) * n + v] = Complex(c[0], c[1]) / static_cast<double>(n);
        }
      }
    }
  }
  return out;
}

std::vector<double> masks(const BlockSpectra& spectra, const WatsonConfig& cfg) {
  const int n = cfg.block_size;
  const std::size_t per_block = static_cast<std::size_t>(n) * n;
  const std::size_t blocks = spectra.coeffs.size() / per_block;
  double mean_dc = 0.0;
  for (std::size_t k = 0; k < blocks; ++k) mean_dc += std::abs(spectra.coeffs[k * per_block]);
  mean_dc = std::max(mean_dc / static_cast<double>(blocks), cfg.dc_floor);

  std::vector<double> out(spectra.coeffs.size());
  for (std::size_t k = 0; k < blocks; ++k) {
    const double dc = std::max(std::abs(spectra.coeffs[k * per_block]), cfg.dc_floor);
    const double luminance = std::pow(dc / mean_dc, cfg.luminance_masking_exponent);
    for (std::size_t f = 0; f < per_block; ++f) {
      const double t = cfg.thresholds[f] * luminance;
      const double amplitude = std::abs(spectra.coeffs[k * per_block + f]);
      const double w = cfg.contrast_masking_exponent;
      out[k * per_block + f] = std::max(t, std::pow(amplitude, w) * std::pow(t, 1.0 - w));
    }
  }
  return out;
}

}  // namespace

WatsonConfig WatsonConfig::defaults() { return from_json(nlohmann::json::parse(builtin::kWatsonDftConfig)); }

WatsonConfig WatsonConfig::from_json(const nlohmann::json& j) {
  WatsonConfig cfg;
  try {
    cfg.block_size = j.value("block_size", cfg.block_size);
    cfg.luminance_masking_exponent = j.value("luminance_masking_exponent", cfg.luminance_masking_exponent);
    cfg.contrast_masking_exponent = j.value("contrast_masking_exponent", cfg.contrast_masking_exponent);
    cfg.pooling_exponent = j.value("pooling_exponent", cfg.pooling_exponent);
    cfg.phase_weight = j.value("phase_weight", cfg.phase_weight);
    cfg.dc_floor = j.value("dc_floor", cfg.dc_floor);
    cfg.output_scale = j.value("output_scale", cfg.output_scale);
    for (const auto& row : j.at("thresholds")) {
      for (const auto& value : row) cfg.thresholds.push_back(value.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("watson config: ") + e.what());
  }
  if (cfg.block_size < 2 || cfg.thresholds.size() != static_cast<std::size_t>(cfg.block_size) * cfg.block_size) {
    throw Error(ErrorCode::kInvalidConfig, "watson thresholds must be block_size x block_size");
  }
  for (double t : cfg.thresholds) {
    if (!(t > 0.0)) throw Error(ErrorCode::kInvalidConfig, "watson thresholds must be positive");
  }
  if (!(cfg.pooling_exponent >= 1.0)) throw Error(ErrorCode::kInvalidConfig, "pooling_exponent must be >= 1");
  if (!(cfg.contrast_masking_exponent >= 0.0 && cfg.contrast_masking_exponent <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "contrast_masking_exponent must lie in [0, 1]");
  }
  if (!(cfg.dc_floor > 0.0)) throw Error(ErrorCode::kInvalidConfig, "dc_floor must be positive");
  return cfg;
}

WatsonConfig WatsonConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidConfig, "cannot open watson config " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidConfig, "watson config is not JSON: " + path.string());
  return from_json(j);
}

nlohmann::json WatsonConfig::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int u = 0; u < block_size; ++u) {
    rows.push_back(std::vector<double>(thresholds.begin() + u * block_size, thresholds.begin() + (u + 1) * block_size));
  }
  return {{"block_size", block_size},
          {"luminance_masking_exponent", luminance_masking_exponent},
          {"contrast_masking_exponent", contrast_masking_exponent},
          {"pooling_exponent", pooling_exponent},
          {"phase_weight", phase_weight},
          {"dc_floor", dc_floor},
          {"output_scale", output_scale},
          {"thresholds", rows}};
}

WatsonDftMetric::WatsonDftMetric(WatsonConfig config) : config_(std::move(config)) {}

double WatsonDftMetric::distance(const Image& a, const Image& b) const {
  require_comparable(a, b, config_.block_size);
  const BlockSpectra sa = block_dft(a, config_.block_size);
  const BlockSpectra sb = block_dft(b, config_.block_size);
  const std::vector<double> ma = masks(sa, config_);
  const std::vector<double> mb = masks(sb, config_);

  const double beta = config_.pooling_exponent;
  double pooled = 0.0;
  for (std::size_t i = 0; i < sa.coeffs.size(); ++i) {
    const Complex ca = sa.coeffs[i];
    const Complex cb = sb.coeffs[i];
    const double mask = 0.5 * (ma[i] + mb[i]);
    const double amp_a = std::abs(ca);
    const double amp_b = std::abs(cb);
    const double amplitude_term = std::abs(amp_a - amp_b) / mask;
    // Angle between the two coefficients; conj keeps this exactly symmetric.
    const double cross_re = ca.real() * cb.real() + ca.imag() * cb.imag();
    const double cross_im = ca.imag() * cb.real() - ca.real() * cb.imag();
    const double phase = std::abs(std::atan2(cross_im, cross_re));
    const double phase_term = config_.phase_weight * phase * std::sqrt(amp_a * amp_b) / mask;
    pooled += std::pow(amplitude_term, beta) + std::pow(phase_term, beta);
  }
  pooled /= static_cast<double>(sa.coeffs.size());
  return config_.output_scale * std::pow(pooled, 1.0 / beta);
}

}  // namespace promptlens
