#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptlens/backend.hpp"
#include "promptlens/lexicon.hpp"

namespace promptlens {

/// Controllable ground truth for the synthetic generator: how strongly each
/// modifier perturbs the base image. A weight w both sets the blend factor
/// and the fraction of the image area the modifier touches.
struct SyntheticEffectProfile {
  std::map<ModifierCategory, double> category_weights{
      {ModifierCategory::kDescriptor, 0.10},
      {ModifierCategory::kNoun, 0.60},
      {ModifierCategory::kArtist, 0.70},
      {ModifierCategory::kLighting, 0.12},
  };
  // Lighting phrases behave either like descriptors or like nouns; which one
  // is a stable function of the phrase.
  double lighting_low = 0.12;
  double lighting_high = 0.55;
  // Per-modifier relative spread: w * (1 + jitter * u), u in [-1, 1).
  double weight_jitter = 0.15;
  // Weight for comma groups that match no known modifier.
  double unknown_weight = 0.40;
  // Central subject area fraction; background pixels are perturbed first.
  double subject_ratio = 0.35;
  // Exact weights keyed by lowercase modifier text; bypass jitter.
  std::map<std::string, double> overrides;
  // Lowercase modifier text -> category; the generator's "vocabulary".
  std::map<std::string, ModifierCategory> vocabulary;

  /// Default weights with every builtin lexicon registered.
  static SyntheticEffectProfile defaults();

  void register_lexicon(const Lexicon& lexicon);
  /// Throws kInvalidArgument when a weight or ratio leaves [0, 1].
  void validate() const;
  /// Perturbation weight for one occurrence of a modifier.
  double weight_for(std::string_view modifier_text, std::optional<ModifierCategory> hint = std::nullopt) const;
  /// Content digest; any change to the profile changes generated images.
  std::string digest() const;
};

/// min(1, w * (1 + 0.25 * (k - 1)))
double repeated_weight(double weight, int repetition_count);

struct ParsedPrompt {
  struct Group {
    std::string text;
    int count = 1;
    std::optional<ModifierCategory> category;
  };
  std::string base;
  std::vector<Group> groups;
};

/// Splits a composed prompt into its base content and modifier groups.
/// Text after " in the style of " is an artist block; trailing comma groups
/// (or space-joined suffixes) are modifiers when the profile knows them.
/// Consecutive identical groups collapse into one group with a count.
ParsedPrompt parse_synthetic_prompt(std::string_view prompt, const SyntheticEffectProfile& profile);

/// Deterministic procedural image:
///  1. base field from multi-octave value noise keyed by (seed, base tokens);
///  2. one field per modifier group keyed by (seed, modifier text);
///  3. inside a region covering a fraction w of the pixels (background
///     first), pixels become (1 - w) * base + w * modifier.
Image synthetic_generate(const GenerationSpec& spec, std::string_view prompt,
                         const SyntheticEffectProfile& profile);

class SyntheticBackend final : public DiffusionBackend {
 public:
  explicit SyntheticBackend(SyntheticEffectProfile profile = SyntheticEffectProfile::defaults());

  std::string id() const override { return "synthetic"; }
  std::optional<std::string> pinned_model_id() const override { return model_id_; }
  Image generate(const GenerationSpec& spec, const std::string& prompt) override;

  const SyntheticEffectProfile& profile() const noexcept { return profile_; }

 private:
  SyntheticEffectProfile profile_;
  std::string model_id_;
};

}  // namespace promptlens
