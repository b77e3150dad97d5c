#pragma once

#include <atomic>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "promptlens/backend.hpp"
#include "promptlens/cache.hpp"
#include "promptlens/prompt.hpp"

namespace promptlens {

/// Routes (spec, prompt) to a registered backend through the image cache.
/// Concurrent requests for the same key share one backend call.
class Generator {
 public:
  Generator(std::shared_ptr<ImageCache> cache, std::shared_ptr<const Tokenizer> tokenizer);

  void register_backend(std::shared_ptr<DiffusionBackend> backend);
  bool has_backend(const std::string& backend_id) const;
  std::shared_ptr<DiffusionBackend> backend(const std::string& backend_id) const;

  /// Spec with the backend's pinned model id applied.
  GenerationSpec resolve(GenerationSpec spec) const;

  /// Throws kTokenBudgetExceeded, kBackendUnavailable or kGenerationFailed.
  ImageRecord generate(const GenerationSpec& spec, const std::string& prompt);

  std::uint64_t backend_invocations() const noexcept { return invocations_.load(); }
  std::uint64_t cache_hits() const noexcept { return cache_hits_.load(); }
  ImageCache* cache() const noexcept { return cache_.get(); }
  const Tokenizer& tokenizer() const noexcept { return *tokenizer_; }

 private:
  ImageRecord generate_uncached(const GenerationSpec& spec, const std::string& prompt);

  std::shared_ptr<ImageCache> cache_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<DiffusionBackend>> backends_;
  std::map<std::string, std::shared_future<ImageRecord>> in_flight_;
  std::atomic<std::uint64_t> invocations_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

}  // namespace promptlens
