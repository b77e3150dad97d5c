#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptlens {

/// CLIP-style context length, BOS/EOS included.
inline constexpr std::size_t kTokenBudget = 77;

enum class ModifierCategory { kDescriptor, kNoun, kArtist, kLighting };

inline constexpr std::array<ModifierCategory, 4> kAllCategories = {
    ModifierCategory::kDescriptor, ModifierCategory::kNoun, ModifierCategory::kArtist,
    ModifierCategory::kLighting};

std::string_view to_string(ModifierCategory category);
/// Plural display label used in tables ("Descriptors", "Nouns", ...).
std::string_view display_name(ModifierCategory category);
std::optional<ModifierCategory> parse_category(std::string_view text);
/// Throws kUnknownCategory.
ModifierCategory category_from_string(std::string_view text);

struct Modifier {
  std::string text;
  ModifierCategory category = ModifierCategory::kDescriptor;
  std::string lexicon_id;

  /// Trims nothing: rejects surrounding whitespace, empty text and template
  /// placeholders with kInvalidArgument.
  static Modifier make(std::string text, ModifierCategory category, std::string lexicon_id = {});

  friend bool operator==(const Modifier&, const Modifier&) = default;
};

enum class JoinRule { kCommaSuffix, kStyleOf, kRawSuffix };

std::string_view to_string(JoinRule rule);
std::optional<JoinRule> parse_join_rule(std::string_view text);

struct PromptTemplate {
  std::string pattern;
  JoinRule join_rule = JoinRule::kCommaSuffix;

  static PromptTemplate comma_suffix();  // "{base}, {modifier}"
  static PromptTemplate style_of();      // "{base} in the style of {modifier}"
  static PromptTemplate raw_suffix();    // "{base} {modifier}"
  static PromptTemplate for_rule(JoinRule rule);

  /// Substitutes the placeholders. An empty modifier block renders the base
  /// unchanged.
  std::string render(std::string_view base, std::string_view modifier_block) const;

  friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

using TemplateMap = std::map<ModifierCategory, PromptTemplate>;

/// Artists use "in the style of"; every other category is comma-suffixed.
TemplateMap default_template_map();

/// Counts tokens the way the text encoder would, including BOS/EOS.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::size_t count_tokens(std::string_view text) const = 0;
};

/// Whitespace split with punctuation as separate tokens, plus BOS and EOS.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::size_t count_tokens(std::string_view text) const override;
  static std::vector<std::string> split(std::string_view text);
};

const Tokenizer& default_tokenizer();

struct PromptVariant {
  std::string base;
  std::optional<Modifier> modifier;
  int repetition_count = 1;
  PromptTemplate prompt_template;
  std::string composed;
  std::size_t token_count = 0;

  bool is_base() const noexcept { return !modifier.has_value(); }

  friend bool operator==(const PromptVariant&, const PromptVariant&) = default;
};

/// Throws kEmptyBase, kInvalidArgument (repetition_count < 1) or
/// kTokenBudgetExceeded.
PromptVariant compose_prompt(std::string_view base, const std::optional<Modifier>& modifier,
                             int repetition_count, const PromptTemplate& prompt_template,
                             const Tokenizer& tokenizer = default_tokenizer());

class Lexicon;

/// Base variant first, then lexicon order x entry order x repetition order.
std::vector<PromptVariant> expand_variants(std::string_view base, const std::vector<Lexicon>& lexicons,
                                           const std::vector<int>& repetitions,
                                           const TemplateMap& templates = default_template_map(),
                                           const Tokenizer& tokenizer = default_tokenizer());

}  // namespace promptlens
