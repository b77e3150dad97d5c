#pragma once

#include <optional>
#include <string>

#include "promptlens/image.hpp"

namespace promptlens {

/// A text-to-image generator. Implementations must be deterministic for a
/// fixed (spec, prompt) and safe to call from several threads.
class DiffusionBackend {
 public:
  virtual ~DiffusionBackend() = default;

  virtual std::string id() const = 0;
  /// When set, the model id this backend actually renders with; it replaces
  /// the configured model id in every GenerationSpec it serves.
  virtual std::optional<std::string> pinned_model_id() const { return std::nullopt; }
  virtual Image generate(const GenerationSpec& spec, const std::string& prompt) = 0;
};

}  // namespace promptlens
