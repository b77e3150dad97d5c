#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptlens/http_adapter.hpp"

namespace promptlens {

inline constexpr int kClipTokens = 77;
inline constexpr int kClipWidth = 768;
inline constexpr int kSentenceWidth = 384;

/// Per-token text embeddings, row-major (token-major). Padding rows are kept.
struct EmbeddingMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  std::span<const float> flat() const noexcept { return values; }
  std::span<const float> row(int r) const noexcept {
    return std::span<const float>(values).subspan(static_cast<std::size_t>(r) * cols, cols);
  }
};

class ClipTextEncoder {
 public:
  virtual ~ClipTextEncoder() = default;
  virtual std::string id() const = 0;
  /// Always kClipTokens x kClipWidth. Throws kTokenBudgetExceeded or
  /// kEncoderUnavailable.
  virtual EmbeddingMatrix encode(std::string_view prompt) const = 0;
};

class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual std::string id() const = 0;
  virtual std::vector<float> encode(std::string_view text) const = 0;
};

/// Offline stand-in for the CLIP text transformer. Each token gets a
/// pseudo-random vector keyed by its lowercase text plus a position vector;
/// row i mixes token i with the normalised sum of the non-padding tokens up
/// to i, so padding rows after EOS still carry the whole prompt, as causal
/// attention does.
class HashedClipEncoder final : public ClipTextEncoder {
 public:
  std::string id() const override { return "hashed-clip-v1"; }
  EmbeddingMatrix encode(std::string_view prompt) const override;
};

/// Offline stand-in for a sentence transformer: mean of hashed unigram and
/// bigram vectors, L2-normalised.
class HashedSentenceEncoder final : public SentenceEncoder {
 public:
  std::string id() const override { return "hashed-sbert-v1"; }
  std::vector<float> encode(std::string_view text) const override;
};

class HttpClipEncoder final : public ClipTextEncoder {
 public:
  explicit HttpClipEncoder(std::shared_ptr<AdapterClient> client) : client_(std::move(client)) {}
  std::string id() const override { return "http-clip"; }
  EmbeddingMatrix encode(std::string_view prompt) const override;

 private:
  std::shared_ptr<AdapterClient> client_;
};

class HttpSentenceEncoder final : public SentenceEncoder {
 public:
  explicit HttpSentenceEncoder(std::shared_ptr<AdapterClient> client) : client_(std::move(client)) {}
  std::string id() const override { return "http-sbert"; }
  std::vector<float> encode(std::string_view text) const override;

 private:
  std::shared_ptr<AdapterClient> client_;
};

}  // namespace promptlens
