#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "promptlens/prompt.hpp"

namespace promptlens {

/// An ordered, validated list of modifiers sharing one category.
///
/// File format: UTF-8 text; the first non-comment line is
/// `category: <descriptor|noun|artist|lighting>`, then one modifier per line.
/// Lines starting with `#` and blank lines are ignored.
class Lexicon {
 public:
  Lexicon(std::string lexicon_id, ModifierCategory category, std::vector<Modifier> entries);

  const std::string& id() const noexcept { return id_; }
  ModifierCategory category() const noexcept { return category_; }
  const std::vector<Modifier>& entries() const& noexcept { return entries_; }
  // By value on temporaries so `for (auto& m : builtin_lexicon(c).entries())` is safe.
  std::vector<Modifier> entries() && { return std::move(entries_); }
  std::size_t size() const noexcept { return entries_.size(); }

  /// First `n` entries (all of them when n >= size()).
  Lexicon truncated(std::size_t n) const;

 private:
  std::string id_;
  ModifierCategory category_;
  std::vector<Modifier> entries_;
};

/// Throws kParseError (message carries the 1-based line number),
/// kDuplicateEntry or kUnknownCategory.
Lexicon parse_lexicon(std::string_view text, std::string lexicon_id);

/// Accepts a filesystem path, or `builtin:<category>` for the lexicons
/// compiled into the library. The lexicon id is the file stem.
Lexicon load_lexicon(const std::filesystem::path& path);

Lexicon builtin_lexicon(ModifierCategory category);
std::string_view builtin_lexicon_text(ModifierCategory category);

}  // namespace promptlens
