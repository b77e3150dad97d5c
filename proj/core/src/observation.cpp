#include "promptlens/observation.hpp"

#include "promptlens/error.hpp"

namespace promptlens {

std::optional<double> PairObservation::similarity(MetricId metric) const {
  auto it = scores.find(metric);
  if (it == scores.end()) return std::nullopt;
  return as_similarity(it->second).value;
}

void to_json(nlohmann::json& j, const PromptVariant& v) {
  j = {{"base", v.base},
       {"repetition_count", v.repetition_count},
       {"template", {{"pattern", v.prompt_template.pattern}, {"join_rule", to_string(v.prompt_template.join_rule)}}},
       {"composed", v.composed},
       {"token_count", v.token_count}};
  if (v.modifier) {
    j["modifier"] = {{"text", v.modifier->text},
                     {"category", to_string(v.modifier->category)},
                     {"lexicon_id", v.modifier->lexicon_id}};
  } else {
    j["modifier"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, PromptVariant& v) {
  v.base = j.at("base").get<std::string>();
  v.repetition_count = j.at("repetition_count").get<int>();
  const auto& t = j.at("template");
  v.prompt_template.pattern = t.at("pattern").get<std::string>();
  auto rule = parse_join_rule(t.at("join_rule").get<std::string>());
  if (!rule) throw Error(ErrorCode::kParseError, "unknown join rule " + t.at("join_rule").dump());
  v.prompt_template.join_rule = *rule;
  v.composed = j.at("composed").get<std::string>();
  v.token_count = j.at("token_count").get<std::size_t>();
  const auto& m = j.at("modifier");
  if (m.is_null()) {
    v.modifier.reset();
  } else {
    v.modifier = Modifier{m.at("text").get<std::string>(), category_from_string(m.at("category").get<std::string>()),
                          m.value("lexicon_id", std::string())};
  }
}

void to_json(nlohmann::json& j, const PairObservation& o) {
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& [metric, score] : o.scores) {
    scores[std::string(to_string(metric))] = {{"value", score.value}, {"orientation", to_string(score.orientation)}};
  }
  nlohmann::json errors = nlohmann::json::object();
  for (const auto& [metric, message] : o.metric_errors) errors[std::string(to_string(metric))] = message;
  j = {{"run_id", o.run_id},
       {"base_variant", o.base_variant},
       {"probe_variant", o.probe_variant},
       {"category", to_string(o.category)},
       {"repetition_count", o.repetition_count},
       {"seed", o.seed},
       {"base_hash", o.base_hash},
       {"probe_hash", o.probe_hash},
       {"scores", scores},
       {"metric_errors", errors}};
}

void from_json(const nlohmann::json& j, PairObservation& o) {
  o.run_id = j.at("run_id").get<std::string>();
  o.base_variant = j.at("base_variant").get<PromptVariant>();
  o.probe_variant = j.at("probe_variant").get<PromptVariant>();
  o.category = category_from_string(j.at("category").get<std::string>());
  o.repetition_count = j.at("repetition_count").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.base_hash = j.at("base_hash").get<std::string>();
  o.probe_hash = j.at("probe_hash").get<std::string>();
  o.scores.clear();
  for (const auto& [name, score] : j.at("scores").items()) {
    const MetricId metric = metric_from_string(name);
    nlohmann::json full = score;
    full["metric"] = name;
    o.scores[metric] = full.get<MetricScore>();
  }
  o.metric_errors.clear();
  if (j.contains("metric_errors")) {
    for (const auto& [name, message] : j.at("metric_errors").items()) {
      o.metric_errors[metric_from_string(name)] = message.get<std::string>();
    }
  }
}

}  // namespace promptlens
