#include "promptlens/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "builtin_data.hpp"
#include "promptlens/error.hpp"

namespace promptlens {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

constexpr std::string_view kBuiltinPrefix = "builtin:";

}  // namespace

Lexicon::Lexicon(std::string lexicon_id, ModifierCategory category, std::vector<Modifier> entries)
    : id_(std::move(lexicon_id)), category_(category), entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (Modifier& m : entries_) {
    if (m.category != category_) {
      throw Error(ErrorCode::kInvalidArgument, "lexicon '" + id_ + "' entry '" + m.text + "' has category " +
                                                   std::string(to_string(m.category)));
    }
    if (!seen.insert(lower(m.text)).second) {
      throw Error(ErrorCode::kDuplicateEntry, "lexicon '" + id_ + "' lists '" + m.text + "' twice");
    }
    m.lexicon_id = id_;
  }
}

Lexicon Lexicon::truncated(std::size_t n) const {
  if (n >= entries_.size()) return *this;
  return Lexicon(id_, category_, std::vector<Modifier>(entries_.begin(), entries_.begin() + static_cast<long>(n)));
}

Lexicon parse_lexicon(std::string_view text, std::string lexicon_id) {
  std::optional<ModifierCategory> category;
  std::vector<Modifier> entries;
  std::set<std::string> seen;

  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line = trim(line.substr(3));
    if (line.empty() || line.front() == '#') continue;

    if (!category) {
      constexpr std::string_view kHeader = "category:";
      if (!line.starts_with(kHeader)) {
        throw Error(ErrorCode::kParseError, lexicon_id + ":" + std::to_string(line_no) +
                                                ": expected 'category: <name>' header");
      }
      const std::string_view name = trim(line.substr(kHeader.size()));
      category = parse_category(name);
      if (!category) {
        throw Error(ErrorCode::kUnknownCategory,
                    lexicon_id + ":" + std::to_string(line_no) + ": unknown category '" + std::string(name) + "'");
      }
      continue;
    }

    if (line.find("{base}") != std::string_view::npos || line.find("{modifier}") != std::string_view::npos) {
      throw Error(ErrorCode::kParseError,
                  lexicon_id + ":" + std::to_string(line_no) + ": template placeholder in entry");
    }
    if (!seen.insert(lower(line)).second) {
      throw Error(ErrorCode::kDuplicateEntry,
                  lexicon_id + ":" + std::to_string(line_no) + ": duplicate entry '" + std::string(line) + "'");
    }
    entries.push_back(Modifier::make(std::string(line), *category, lexicon_id));
  }
  if (!category) throw Error(ErrorCode::kParseError, lexicon_id + ": missing 'category:' header");
  return Lexicon(std::move(lexicon_id), *category, std::move(entries));
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  const std::string spelled = path.string();
  if (spelled.starts_with(kBuiltinPrefix)) {
    return builtin_lexicon(category_from_string(spelled.substr(kBuiltinPrefix.size())));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open lexicon file " + spelled);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_lexicon(buffer.str(), path.stem().string());
}

std::string_view builtin_lexicon_text(ModifierCategory category) {
  switch (category) {
    case ModifierCategory::kDescriptor: return builtin::kLexiconDescriptor;
    case ModifierCategory::kNoun: return builtin::kLexiconNoun;
    case ModifierCategory::kArtist: return builtin::kLexiconArtist;
    case ModifierCategory::kLighting: return builtin::kLexiconLighting;
  }
  return builtin::kLexiconDescriptor;
}

Lexicon builtin_lexicon(ModifierCategory category) {
  return parse_lexicon(builtin_lexicon_text(category), std::string(to_string(category)));
}

}  // namespace promptlens
