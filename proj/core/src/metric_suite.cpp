#include "promptlens/metrics/metric_suite.hpp"

#include <deque>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"
#include "promptlens/metrics/cosine.hpp"

namespace promptlens {

namespace {

constexpr std::size_t kFeatureCacheEntries = 16;
constexpr std::size_t kTextCacheEntries = 64;

// Small insertion-ordered cache; evicts the oldest entry when full.
template <typename Value>
class BoundedCache {
 public:
  explicit BoundedCache(std::size_t capacity) : capacity_(capacity) {}

  std::shared_ptr<const Value> find(const std::string& key) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : it->second;
  }

  void insert(const std::string& key, std::shared_ptr<const Value> value) {
    std::lock_guard lock(mutex_);
    if (entries_.contains(key)) return;
    if (order_.size() >= capacity_) {
      entries_.erase(order_.front());
      order_.pop_front();
    }
    entries_.emplace(key, std::move(value));
    order_.push_back(key);
  }

 private:
  std::mutex mutex_;
  std::size_t capacity_;
  std::unordered_map<std::string, std::shared_ptr<const Value>> entries_;
  std::deque<std::string> order_;
};

WeightSource pinned(WeightSource source) {
  constexpr std::string_view kBuiltin = "builtin:";
  if (source.digest.empty() && source.location.starts_with(kBuiltin)) {
    source.digest = std::string(reference_weight_digest(std::string_view(source.location).substr(kBuiltin.size())));
  }
  return source;
}

WeightSource weight_source_from_json(const nlohmann::json& j, WeightSource fallback) {
  if (j.is_string()) return {j.get<std::string>(), ""};
  fallback.location = j.value("location", fallback.location);
  fallback.digest = j.value("digest", std::string());
  return fallback;
}

}  // namespace

struct MetricSuite::Networks {
  std::once_flag lpips_once, vgg_once, watson_once;
  std::unique_ptr<LpipsMetric> lpips;
  std::unique_ptr<VggPerceptualMetric> vgg;
  std::unique_ptr<WatsonDftMetric> watson;
  std::string lpips_digest, vgg_digest;
  BoundedCache<std::vector<FeatureMap>> lpips_features{kFeatureCacheEntries};
  BoundedCache<std::vector<FeatureMap>> vgg_features{kFeatureCacheEntries};
  BoundedCache<EmbeddingMatrix> clip_cache{kTextCacheEntries};
  BoundedCache<std::vector<float>> sentence_cache{kTextCacheEntries};
};

MetricSuiteConfig MetricSuiteConfig::from_json(const nlohmann::json& j) {
  MetricSuiteConfig cfg;
  try {
    if (j.contains("lpips")) cfg.lpips = weight_source_from_json(j.at("lpips"), cfg.lpips);
    if (j.contains("vgg")) cfg.vgg = weight_source_from_json(j.at("vgg"), cfg.vgg);
    if (j.contains("watson_config")) cfg.watson_config = j.at("watson_config").get<std::string>();
    cfg.text_encoders = j.value("text_encoders", cfg.text_encoders);
    cfg.adapter_url = j.value("adapter_url", cfg.adapter_url);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("metrics config: ") + e.what());
  }
  if (cfg.text_encoders != "hashed" && cfg.text_encoders != "http") {
    throw Error(ErrorCode::kInvalidConfig, "text_encoders must be \"hashed\" or \"http\"");
  }
  return cfg;
}

nlohmann::json MetricSuiteConfig::to_json() const {
  nlohmann::json j{{"lpips", {{"location", lpips.location}, {"digest", lpips.digest}}},
                   {"vgg", {{"location", vgg.location}, {"digest", vgg.digest}}},
                   {"text_encoders", text_encoders}};
  if (watson_config) j["watson_config"] = watson_config->string();
  if (!adapter_url.empty()) j["adapter_url"] = adapter_url;
  return j;
}

MetricSuite::MetricSuite(MetricSuiteConfig config) : config_(std::move(config)), nets_(std::make_shared<Networks>()) {
  if (config_.text_encoders == "http") {
    std::string url = config_.adapter_url.empty() ? backend_url_from_env() : config_.adapter_url;
    if (url.empty()) {
      throw Error(ErrorCode::kEncoderUnavailable, "http text encoders need an adapter url or PROMPTLENS_BACKEND_URL");
    }
    auto client = std::make_shared<AdapterClient>(url);
    clip_ = std::make_shared<HttpClipEncoder>(client);
    sentence_ = std::make_shared<HttpSentenceEncoder>(client);
  } else {
    clip_ = std::make_shared<HashedClipEncoder>();
    sentence_ = std::make_shared<HashedSentenceEncoder>();
  }
}

MetricSuite::MetricSuite(MetricSuiteConfig config, std::shared_ptr<const ClipTextEncoder> clip,
                         std::shared_ptr<const SentenceEncoder> sentence)
    : config_(std::move(config)),
      clip_(std::move(clip)),
      sentence_(std::move(sentence)),
      nets_(std::make_shared<Networks>()) {
  if (!clip_ || !sentence_) throw Error(ErrorCode::kInvalidArgument, "encoders must not be null");
}

const LpipsMetric& MetricSuite::lpips() const {
  std::call_once(nets_->lpips_once, [this] {
    auto loaded = load_weights(pinned(config_.lpips));
    nets_->lpips = std::make_unique<LpipsMetric>(loaded.tensors);
    nets_->lpips_digest = loaded.digest;
  });
  return *nets_->lpips;
}

const VggPerceptualMetric& MetricSuite::vgg() const {
  std::call_once(nets_->vgg_once, [this] {
    auto loaded = load_weights(pinned(config_.vgg));
    nets_->vgg = std::make_unique<VggPerceptualMetric>(loaded.tensors);
    nets_->vgg_digest = loaded.digest;
  });
  return *nets_->vgg;
}

const WatsonDftMetric& MetricSuite::watson() const {
  std::call_once(nets_->watson_once, [this] {
    nets_->watson = std::make_unique<WatsonDftMetric>(config_.watson_config ? WatsonConfig::load(*config_.watson_config)
                                                                            : WatsonConfig::defaults());
  });
  return *nets_->watson;
}

MetricScore MetricSuite::image_distance(const Image& a, const Image& b, MetricId metric) const {
  double value = 0.0;
  switch (metric) {
    case MetricId::kLpips: value = lpips().distance(a, b); break;
    case MetricId::kVggPerceptual: value = vgg().distance(a, b); break;
    case MetricId::kWatsonDft: value = watson().distance(a, b); break;
    default:
      throw Error(ErrorCode::kInvalidArgument, std::string(to_string(metric)) + " is not an image metric");
  }
  return {metric, value, Orientation::kDistance};
}

double MetricSuite::cached_distance(const ImageRecord& a, const ImageRecord& b, MetricId metric) const {
  auto with_cache = [&](const auto& net, auto& cache) {
    require_comparable(a.image(), b.image(), net.network().min_input_size());
    auto features_of = [&](const ImageRecord& r) {
      if (auto hit = cache.find(r.content_hash)) return hit;
      auto computed = std::make_shared<const std::vector<FeatureMap>>(net.features(r.image()));
      cache.insert(r.content_hash, computed);
      return computed;
    };
    auto fa = features_of(a);
    auto fb = features_of(b);
    return net.distance(*fa, *fb);
  };
  switch (metric) {
    case MetricId::kLpips: return with_cache(lpips(), nets_->lpips_features);
    case MetricId::kVggPerceptual: return with_cache(vgg(), nets_->vgg_features);
    default: return image_distance(a.image(), b.image(), metric).value;
  }
}

MetricScore MetricSuite::image_distance(const ImageRecord& a, const ImageRecord& b, MetricId metric) const {
  if (!is_image_metric(metric)) {
    throw Error(ErrorCode::kInvalidArgument, std::string(to_string(metric)) + " is not an image metric");
  }
  if (!a.pixels || !b.pixels) throw Error(ErrorCode::kInvalidArgument, "image record has no pixels");
  return {metric, cached_distance(a, b, metric), Orientation::kDistance};
}

EmbeddingMatrix MetricSuite::text_embedding(std::string_view prompt) const { return clip_->encode(prompt); }

MetricScore MetricSuite::text_similarity(std::string_view a, std::string_view b, MetricId metric) const {
  if (metric == MetricId::kClipFlatCosine) {
    auto embed = [&](std::string_view p) {
      const std::string key(p);
      if (auto hit = nets_->clip_cache.find(key)) return hit;
      auto m = std::make_shared<const EmbeddingMatrix>(clip_->encode(p));
      nets_->clip_cache.insert(key, m);
      return m;
    };
    auto ea = embed(a);
    auto eb = embed(b);
    return {metric, cosine_similarity(ea->flat(), eb->flat()), Orientation::kSimilarity};
  }
  if (metric == MetricId::kSbertCosine) {
    auto embed = [&](std::string_view p) {
      const std::string key(p);
      if (auto hit = nets_->sentence_cache.find(key)) return hit;
      auto v = std::make_shared<const std::vector<float>>(sentence_->encode(p));
      nets_->sentence_cache.insert(key, v);
      return v;
    };
    auto ea = embed(a);
    auto eb = embed(b);
    return {metric, cosine_similarity(std::span<const float>(*ea), std::span<const float>(*eb)),
            Orientation::kSimilarity};
  }
  throw Error(ErrorCode::kInvalidArgument, std::string(to_string(metric)) + " is not a text metric");
}

std::map<MetricId, MetricScore> MetricSuite::score_pair(const ImageRecord& base, const ImageRecord& probe,
                                                        const std::vector<MetricId>& metrics) const {
  std::map<MetricId, MetricScore> out;
  for (MetricId m : metrics) {
    out[m] = is_image_metric(m) ? image_distance(base, probe, m) : text_similarity(base.prompt, probe.prompt, m);
  }
  return out;
}

nlohmann::json MetricSuite::provenance(const std::vector<MetricId>& metrics) const {
  nlohmann::json j = nlohmann::json::object();
  for (MetricId m : metrics) {
    switch (m) {
      case MetricId::kLpips:
        lpips();
        j["lpips"] = {{"location", config_.lpips.location}, {"digest", nets_->lpips_digest}};
        break;
      case MetricId::kVggPerceptual:
        vgg();
        j["vgg_perceptual"] = {{"location", config_.vgg.location}, {"digest", nets_->vgg_digest}};
        break;
      case MetricId::kWatsonDft:
        j["watson_dft"] = {{"config_digest", sha256_hex(watson().config().to_json().dump())}};
        break;
      case MetricId::kClipFlatCosine: j["clip_flat_cosine"] = {{"encoder", clip_->id()}}; break;
      case MetricId::kSbertCosine: j["sbert_cosine"] = {{"encoder", sentence_->id()}}; break;
    }
  }
  return j;
}

}  // namespace promptlens
