#include "promptlens/metrics/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"

namespace promptlens {

namespace {

constexpr double kPositionScale = 0.25;
constexpr double kSelfWeight = 0.35;

std::string lowercase(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Approximately unit-variance components from a Philox stream.
void hashed_vector(std::string_view domain, std::string_view token, std::span<double> out) {
  std::string key(domain);
  key += '\x1f';
  key += token;
  CounterRng rng(fnv1a64(key));
  for (double& v : out) v = std::sqrt(3.0) * rng.next_symmetric();
}

}  // namespace

EmbeddingMatrix HashedClipEncoder::encode(std::string_view prompt) const {
  std::vector<std::string> tokens{"<|startoftext|>"};
  for (auto& word : WhitespaceTokenizer::split(prompt)) tokens.push_back(lowercase(word));
  tokens.emplace_back("<|endoftext|>");
  if (tokens.size() > static_cast<std::size_t>(kClipTokens)) {
    throw Error(ErrorCode::kTokenBudgetExceeded,
                std::to_string(tokens.size()) + " tokens exceed the budget of " + std::to_string(kClipTokens));
  }
  const int real_tokens = static_cast<int>(tokens.size()) - 1;
  while (tokens.size() < static_cast<std::size_t>(kClipTokens)) tokens.emplace_back("<|pad|>");

  EmbeddingMatrix m{kClipTokens, kClipWidth, std::vector<float>(static_cast<std::size_t>(kClipTokens) * kClipWidth)};
  std::vector<double> token_vec(kClipWidth);
  std::vector<double> position_vec(kClipWidth);
  std::vector<double> context(kClipWidth, 0.0);
  const double context_weight = std::sqrt(1.0 - kSelfWeight * kSelfWeight);
  int seen = 0;
  for (int i = 0; i < kClipTokens; ++i) {
    hashed_vector("clip-token", tokens[i], token_vec);
    hashed_vector("clip-position", std::to_string(i), position_vec);
    // Padding attends to the prompt but adds nothing to it.
    if (i <= real_tokens) {
      for (int d = 0; d < kClipWidth; ++d) context[d] += token_vec[d];
      ++seen;
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(seen));
    float* row = &m.values[static_cast<std::size_t>(i) * kClipWidth];
    for (int d = 0; d < kClipWidth; ++d) {
      const double x = token_vec[d] + kPositionScale * position_vec[d];
      row[d] = static_cast<float>(kSelfWeight * x + context_weight * context[d] * norm);
    }
  }
  return m;
}

std::vector<float> HashedSentenceEncoder::encode(std::string_view text) const {
  std::vector<std::string> words;
  for (auto& token : WhitespaceTokenizer::split(text)) {
    if (token.size() == 1 && std::ispunct(static_cast<unsigned char>(token[0]))) continue;
    words.push_back(lowercase(token));
  }
  std::vector<double> sum(kSentenceWidth, 0.0);
  std::vector<double> v(kSentenceWidth);
  auto add = [&](std::string_view domain, const std::string& key) {
    hashed_vector(domain, key, v);
    for (int d = 0; d < kSentenceWidth; ++d) sum[d] += v[d];
  };
  for (const auto& w : words) add("sbert-unigram", w);
  for (std::size_t i = 1; i < words.size(); ++i) add("sbert-bigram", words[i - 1] + " " + words[i]);
  if (words.empty()) add("sbert-empty", "");

  double norm = 0.0;
  for (double x : sum) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<float> out(kSentenceWidth);
  for (int d = 0; d < kSentenceWidth; ++d) out[d] = static_cast<float>(sum[d] / norm);
  return out;
}

EmbeddingMatrix HttpClipEncoder::encode(std::string_view prompt) const {
  const auto reply = client_->post_json("/encode/clip", {{"text", std::string(prompt)}},
                                        ErrorCode::kEncoderUnavailable, ErrorCode::kEncoderUnavailable);
  EmbeddingMatrix m;
  try {
    m.rows = reply.at("rows").get<int>();
    m.cols = reply.at("cols").get<int>();
    m.values = reply.at("data").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kEncoderUnavailable, std::string("malformed /encode/clip reply: ") + e.what());
  }
  if (m.rows != kClipTokens || m.cols != kClipWidth || m.values.size() != static_cast<std::size_t>(m.rows) * m.cols) {
    throw Error(ErrorCode::kEncoderUnavailable, "adapter returned a " + std::to_string(m.rows) + "x" +
                                                    std::to_string(m.cols) + " embedding, expected 77x768");
  }
  return m;
}

std::vector<float> HttpSentenceEncoder::encode(std::string_view text) const {
  const auto reply = client_->post_json("/encode/sentence", {{"text", std::string(text)}},
                                        ErrorCode::kEncoderUnavailable, ErrorCode::kEncoderUnavailable);
  try {
    auto data = reply.at("data").get<std::vector<float>>();
    if (data.empty()) throw Error(ErrorCode::kEncoderUnavailable, "adapter returned an empty sentence embedding");
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kEncoderUnavailable, std::string("malformed /encode/sentence reply: ") + e.what());
  }
}

}  // namespace promptlens
