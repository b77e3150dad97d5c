#pragma once

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>

#include "promptlens/image.hpp"

namespace testing_support {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("promptlens-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline promptlens::Image random_image(std::mt19937_64& rng, int w, int h) {
  promptlens::Image img(w, h);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

// Smooth image with a random gradient plus mild noise, closer to natural
// content than white noise.
inline promptlens::Image smooth_image(std::mt19937_64& rng, int w, int h) {
  promptlens::Image img(w, h);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double gx[3] = {u(rng), u(rng), u(rng)}, gy[3] = {u(rng), u(rng), u(rng)}, c[3] = {u(rng), u(rng), u(rng)};
  std::normal_distribution<double> noise(0.0, 6.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) {
        const double v = 255.0 * (0.3 * c[k] + 0.35 * gx[k] * x / w + 0.35 * gy[k] * y / h) + noise(rng);
        img.at(x, y)[k] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

}  // namespace testing_support
