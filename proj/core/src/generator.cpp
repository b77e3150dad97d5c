#include "promptlens/generator.hpp"

#include "promptlens/error.hpp"

namespace promptlens {

Generator::Generator(std::shared_ptr<ImageCache> cache, std::shared_ptr<const Tokenizer> tokenizer)
    : cache_(std::move(cache)), tokenizer_(std::move(tokenizer)) {
  if (!tokenizer_) tokenizer_ = std::shared_ptr<const Tokenizer>(&default_tokenizer(), [](const Tokenizer*) {});
}

void Generator::register_backend(std::shared_ptr<DiffusionBackend> backend) {
  std::lock_guard lock(mutex_);
  backends_[backend->id()] = std::move(backend);
}

bool Generator::has_backend(const std::string& backend_id) const {
  std::lock_guard lock(mutex_);
  return backends_.count(backend_id) != 0;
}

std::shared_ptr<DiffusionBackend> Generator::backend(const std::string& backend_id) const {
  std::lock_guard lock(mutex_);
  auto it = backends_.find(backend_id);
  if (it == backends_.end()) {
    throw Error(ErrorCode::kBackendUnavailable, "no backend registered as '" + backend_id + "'");
  }
  return it->second;
}

GenerationSpec Generator::resolve(GenerationSpec spec) const {
  if (auto pinned = backend(spec.backend_id)->pinned_model_id()) spec.model_id = *pinned;
  return spec;
}

ImageRecord Generator::generate(const GenerationSpec& requested, const std::string& prompt) {
  requested.validate();
  const GenerationSpec spec = resolve(requested);
  const std::size_t tokens = tokenizer_->count_tokens(prompt);
  if (tokens > kTokenBudget) {
    throw Error(ErrorCode::kTokenBudgetExceeded,
                "prompt uses " + std::to_string(tokens) + " tokens, budget is " + std::to_string(kTokenBudget),
                prompt);
  }

  if (cache_) {
    try {
      if (auto hit = cache_->lookup(spec, prompt)) {
        ++cache_hits_;
        return *hit;
      }
    } catch (const Error& e) {
      // The corrupt entry is already quarantined; regenerate it.
      if (e.code() != ErrorCode::kCacheCorrupt) throw;
    }
  }

  const std::string key = ImageCache::key_digest(spec, prompt);
  std::promise<ImageRecord> promise;
  std::shared_future<ImageRecord> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = in_flight_.find(key);
    if (it != in_flight_.end()) {
      future = it->second;
    } else {
      future = promise.get_future().share();
      in_flight_.emplace(key, future);
      owner = true;
    }
  }
  if (!owner) return future.get();

  try {
    ImageRecord record = generate_uncached(spec, prompt);
    promise.set_value(record);
  } catch (...) {
    promise.set_exception(std::current_exception());
  }
  {
    std::lock_guard lock(mutex_);
    in_flight_.erase(key);
  }
  return future.get();
}

ImageRecord Generator::generate_uncached(const GenerationSpec& spec, const std::string& prompt) {
  auto target = backend(spec.backend_id);
  ++invocations_;
  Image image;
  try {
    image = target->generate(spec, prompt);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kBackendUnavailable || e.code() == ErrorCode::kGenerationFailed) throw;
    throw Error(ErrorCode::kGenerationFailed, "backend '" + spec.backend_id + "' failed: " + e.what(), prompt);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kGenerationFailed, "backend '" + spec.backend_id + "' failed: " + e.what(), prompt);
  }
  if (image.width != spec.width || image.height != spec.height) {
    throw Error(ErrorCode::kGenerationFailed,
                "backend returned " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                    ", expected " + std::to_string(spec.width) + "x" + std::to_string(spec.height),
                prompt);
  }
  ImageRecord record = make_record(std::move(image), spec, prompt);
  if (cache_) cache_->store(record);
  return record;
}

}  // namespace promptlens
