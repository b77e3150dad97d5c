#include "promptlens/prompt.hpp"

#include <algorithm>
#include <cctype>

#include "promptlens/error.hpp"
#include "promptlens/lexicon.hpp"

namespace promptlens {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_punct_token(char c) {
  switch (c) {
    case ',': case '.': case ';': case ':': case '!': case '?': case '(': case ')': case '"':
      return true;
    default:
      return false;
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

std::string_view to_string(ModifierCategory category) {
  switch (category) {
    case ModifierCategory::kDescriptor: return "descriptor";
    case ModifierCategory::kNoun: return "noun";
    case ModifierCategory::kArtist: return "artist";
    case ModifierCategory::kLighting: return "lighting";
  }
  return "descriptor";
}

std::string_view display_name(ModifierCategory category) {
  switch (category) {
    case ModifierCategory::kDescriptor: return "Descriptors";
    case ModifierCategory::kNoun: return "Nouns";
    case ModifierCategory::kArtist: return "Artists";
    case ModifierCategory::kLighting: return "Lighting";
  }
  return "Descriptors";
}

std::optional<ModifierCategory> parse_category(std::string_view text) {
  const std::string key = lower(text);
  for (ModifierCategory c : kAllCategories) {
    if (key == to_string(c)) return c;
  }
  return std::nullopt;
}

ModifierCategory category_from_string(std::string_view text) {
  if (auto c = parse_category(text)) return *c;
  throw Error(ErrorCode::kUnknownCategory, "unknown modifier category '" + std::string(text) + "'");
}

Modifier Modifier::make(std::string text, ModifierCategory category, std::string lexicon_id) {
  if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "modifier text is empty");
  if (is_space(text.front()) || is_space(text.back())) {
    throw Error(ErrorCode::kInvalidArgument, "modifier '" + text + "' has surrounding whitespace");
  }
  if (text.find("{base}") != std::string::npos || text.find("{modifier}") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "modifier '" + text + "' contains a template placeholder");
  }
  return Modifier{std::move(text), category, std::move(lexicon_id)};
}

std::string_view to_string(JoinRule rule) {
  switch (rule) {
    case JoinRule::kCommaSuffix: return "comma_suffix";
    case JoinRule::kStyleOf: return "style_of";
    case JoinRule::kRawSuffix: return "raw_suffix";
  }
  return "comma_suffix";
}

std::optional<JoinRule> parse_join_rule(std::string_view text) {
  for (JoinRule r : {JoinRule::kCommaSuffix, JoinRule::kStyleOf, JoinRule::kRawSuffix}) {
    if (text == to_string(r)) return r;
  }
  return std::nullopt;
}

PromptTemplate PromptTemplate::comma_suffix() { return {"{base}, {modifier}", JoinRule::kCommaSuffix}; }
PromptTemplate PromptTemplate::style_of() { return {"{base} in the style of {modifier}", JoinRule::kStyleOf}; }
PromptTemplate PromptTemplate::raw_suffix() { return {"{base} {modifier}", JoinRule::kRawSuffix}; }

PromptTemplate PromptTemplate::for_rule(JoinRule rule) {
  switch (rule) {
    case JoinRule::kCommaSuffix: return comma_suffix();
    case JoinRule::kStyleOf: return style_of();
    case JoinRule::kRawSuffix: return raw_suffix();
  }
  return comma_suffix();
}

std::string PromptTemplate::render(std::string_view base, std::string_view modifier_block) const {
  if (modifier_block.empty()) return std::string(base);
  std::string out = pattern;
  replace_all(out, "{modifier}", modifier_block);
  replace_all(out, "{base}", base);
  return out;
}

TemplateMap default_template_map() {
  TemplateMap map;
  for (ModifierCategory c : kAllCategories) map[c] = PromptTemplate::comma_suffix();
  map[ModifierCategory::kArtist] = PromptTemplate::style_of();
  return map;
}

std::vector<std::string> WhitespaceTokenizer::split(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct_token(c)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

std::size_t WhitespaceTokenizer::count_tokens(std::string_view text) const {
  return split(text).size() + 2;
}

const Tokenizer& default_tokenizer() {
  static const WhitespaceTokenizer tokenizer;
  return tokenizer;
}

PromptVariant compose_prompt(std::string_view base, const std::optional<Modifier>& modifier,
                             int repetition_count, const PromptTemplate& prompt_template,
                             const Tokenizer& tokenizer) {
  const bool blank = std::all_of(base.begin(), base.end(), is_space);
  if (blank) throw Error(ErrorCode::kEmptyBase, "base prompt is empty");

  PromptVariant v;
  v.base = std::string(base);
  v.modifier = modifier;
  v.prompt_template = prompt_template;
  if (modifier) {
    if (repetition_count < 1) {
      throw Error(ErrorCode::kInvalidArgument,
                  "repetition_count must be >= 1, got " + std::to_string(repetition_count));
    }
    v.repetition_count = repetition_count;
    std::string block = modifier->text;
    for (int i = 1; i < repetition_count; ++i) block += ", " + modifier->text;
    v.composed = prompt_template.render(base, block);
  } else {
    v.repetition_count = 1;
    v.composed = v.base;
  }
  v.token_count = tokenizer.count_tokens(v.composed);
  if (v.token_count > kTokenBudget) {
    throw Error(ErrorCode::kTokenBudgetExceeded,
                "prompt uses " + std::to_string(v.token_count) + " tokens, budget is " +
                    std::to_string(kTokenBudget),
                v.composed);
  }
  return v;
}

std::vector<PromptVariant> expand_variants(std::string_view base, const std::vector<Lexicon>& lexicons,
                                           const std::vector<int>& repetitions, const TemplateMap& templates,
                                           const Tokenizer& tokenizer) {
  if (repetitions.empty()) throw Error(ErrorCode::kInvalidArgument, "repetitions must be non-empty");
  for (std::size_t i = 0; i < repetitions.size(); ++i) {
    if (repetitions[i] < 1 || (i > 0 && repetitions[i] <= repetitions[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "repetitions must be ascending and >= 1");
    }
  }

  std::vector<PromptVariant> variants;
  variants.push_back(compose_prompt(base, std::nullopt, 1, PromptTemplate::comma_suffix(), tokenizer));
  for (const Lexicon& lexicon : lexicons) {
    auto it = templates.find(lexicon.category());
    const PromptTemplate tmpl = it != templates.end() ? it->second : PromptTemplate::comma_suffix();
    for (const Modifier& entry : lexicon.entries()) {
      for (int k : repetitions) {
        try {
          variants.push_back(compose_prompt(base, entry, k, tmpl, tokenizer));
        } catch (const Error& e) {
          throw Error(e.code(),
                      std::string(e.what()) + " (lexicon '" + lexicon.id() + "', entry '" + entry.text +
                          "', repetition " + std::to_string(k) + ")",
                      e.detail());
        }
      }
    }
  }
  return variants;
}

}  // namespace promptlens
