#include "promptlens/synthetic_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"

namespace promptlens {

namespace {

constexpr std::string_view kStyleMarker = " in the style of ";
constexpr int kSeparation = 32;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_groups(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(',', start);
    parts.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string normalize_tokens(std::string_view text) {
  std::string out;
  for (const std::string& token : WhitespaceTokenizer::split(text)) {
    if (!out.empty()) out.push_back(' ');
    out += lower(token);
  }
  return out;
}

std::uint64_t mix_key(std::uint64_t seed, std::string_view domain, std::string_view text) {
  std::uint64_t h = fnv1a64(domain);
  h ^= seed + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  h ^= fnv1a64(text) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  return h;
}

double unit_from_text(std::string_view domain, std::string_view text) {
  const auto block = philox4x32({0, 0, 0, 0}, philox_key(mix_key(0, domain, text)));
  return to_unit_double(block[0], block[1]);
}

// Multi-octave value noise in [0, 1]. Lattice values come straight from the
// counter-based generator indexed by (ix, iy, octave, channel).
std::vector<float> value_noise(int width, int height, std::uint64_t key, std::uint32_t channel, int base_cells,
                               int octaves) {
  std::vector<float> field(static_cast<std::size_t>(width) * height, 0.0f);
  const PhiloxKey pkey = philox_key(key);
  double amplitude = 1.0;
  double total = 0.0;
  for (int octave = 0; octave < octaves; ++octave) {
    const int cells = base_cells << octave;
    std::vector<float> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
    for (int iy = 0; iy <= cells; ++iy) {
      for (int ix = 0; ix <= cells; ++ix) {
        const auto r = philox4x32({static_cast<std::uint32_t>(ix), static_cast<std::uint32_t>(iy),
                                   static_cast<std::uint32_t>(octave), channel},
                                  pkey);
        lattice[static_cast<std::size_t>(iy) * (cells + 1) + ix] = static_cast<float>(to_unit_double(r[0], r[1]));
      }
    }
    const double sx = static_cast<double>(cells) / width;
    const double sy = static_cast<double>(cells) / height;
    for (int y = 0; y < height; ++y) {
      const double fy = (y + 0.5) * sy;
      const int iy = std::min(static_cast<int>(fy), cells - 1);
      double ty = fy - iy;
      ty = ty * ty * (3.0 - 2.0 * ty);
      for (int x = 0; x < width; ++x) {
        const double fx = (x + 0.5) * sx;
        const int ix = std::min(static_cast<int>(fx), cells - 1);
        double tx = fx - ix;
        tx = tx * tx * (3.0 - 2.0 * tx);
        const float* row0 = &lattice[static_cast<std::size_t>(iy) * (cells + 1)];
        const float* row1 = row0 + (cells + 1);
        const double top = row0[ix] + (row0[ix + 1] - row0[ix]) * tx;
        const double bottom = row1[ix] + (row1[ix + 1] - row1[ix]) * tx;
        field[static_cast<std::size_t>(y) * width + x] += static_cast<float>(amplitude * (top + (bottom - top) * ty));
      }
    }
    total += amplitude;
    amplitude *= 0.5;
  }
  for (float& v : field) v = static_cast<float>(v / total);
  return field;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

// Colour field: shared luminance texture with per-channel chroma.
Image render_field(int width, int height, std::uint64_t key) {
  const auto luma = value_noise(width, height, key, 0, 3, 5);
  Image image(width, height);
  std::array<std::vector<float>, 3> chroma;
  for (std::uint32_t c = 0; c < 3; ++c) chroma[c] = value_noise(width, height, key, 1 + c, 2, 2);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double contrast = (luma[i] - 0.5) * 1.6 + 0.5;
      image.rgb[i * 3 + c] = to_byte(0.6 * contrast + 0.4 * chroma[c][i]);
    }
  }
  return image;
}

// Elliptical distance from the centre, 1.0 on the subject boundary.
double subject_distance(int x, int y, int width, int height, double subject_ratio) {
  const double dx = (x + 0.5) / width - 0.5;
  const double dy = (y + 0.5) / height - 0.5;
  const double radius = std::sqrt(std::max(subject_ratio, 1e-6) / M_PI);
  return std::sqrt(dx * dx + dy * dy) / radius;
}

Image render_base(const GenerationSpec& spec, std::string_view base, double subject_ratio) {
  const std::string tokens = normalize_tokens(base);
  Image image = render_field(spec.width, spec.height, mix_key(spec.seed, "base", tokens));
  // A flat-coloured subject blob gives the image a foreground.
  const auto tint = philox4x32({1, 2, 3, 4}, philox_key(mix_key(spec.seed, "subject", tokens)));
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double d = subject_distance(x, y, spec.width, spec.height, subject_ratio);
      const double alpha = std::clamp((1.15 - d) / 0.3, 0.0, 1.0) * 0.55;
      if (alpha <= 0.0) continue;
      std::uint8_t* px = image.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double colour = static_cast<double>(tint[c] & 0xFF);
        px[c] = static_cast<std::uint8_t>(std::lround(px[c] + alpha * (colour - px[c])));
      }
    }
  }
  return image;
}

void apply_group(Image& image, const GenerationSpec& spec, const std::string& text, double weight,
                 double subject_ratio) {
  if (weight <= 0.0) return;
  const std::string key_text = lower(text);
  Image modifier = render_field(spec.width, spec.height, mix_key(spec.seed, "modifier", key_text));
  const auto jitter = value_noise(spec.width, spec.height, mix_key(spec.seed, "region", key_text), 0, 2, 2);

  const std::size_t n = image.pixel_count();
  std::vector<double> priority(n);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * spec.width + x;
      priority[i] = subject_distance(x, y, spec.width, spec.height, subject_ratio) + 0.35 * (jitter[i] - 0.5);
    }
  }
  const auto count = static_cast<std::size_t>(std::llround(weight * static_cast<double>(n)));
  if (count == 0) return;
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    return priority[a] != priority[b] ? priority[a] > priority[b] : a < b;
  };
  if (count < n) std::nth_element(order.begin(), order.begin() + static_cast<long>(count), order.end(), before);

  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = order[k];
    for (int c = 0; c < 3; ++c) {
      const int b = image.rgb[i * 3 + c];
      int m = modifier.rgb[i * 3 + c];
      if (std::abs(m - b) < kSeparation) m = (b + kSeparation <= 255) ? b + kSeparation : b - kSeparation;
      image.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(b + weight * (m - b)));
    }
  }
}

}  // namespace

SyntheticEffectProfile SyntheticEffectProfile::defaults() {
  SyntheticEffectProfile profile;
  for (ModifierCategory c : kAllCategories) profile.register_lexicon(builtin_lexicon(c));
  return profile;
}

void SyntheticEffectProfile::register_lexicon(const Lexicon& lexicon) {
  for (const Modifier& m : lexicon.entries()) vocabulary.emplace(lower(m.text), m.category);
}

void SyntheticEffectProfile::validate() const {
  auto check = [](double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::kInvalidArgument, what + " must lie in [0, 1]");
  };
  for (const auto& [c, w] : category_weights) check(w, "weight for " + std::string(to_string(c)));
  check(lighting_low, "lighting_low");
  check(lighting_high, "lighting_high");
  check(weight_jitter, "weight_jitter");
  check(unknown_weight, "unknown_weight");
  check(subject_ratio, "subject_ratio");
  for (const auto& [text, w] : overrides) check(w, "override for '" + text + "'");
}

double SyntheticEffectProfile::weight_for(std::string_view modifier_text, std::optional<ModifierCategory> hint) const {
  const std::string key = lower(trim(modifier_text));
  if (auto it = overrides.find(key); it != overrides.end()) return it->second;

  std::optional<ModifierCategory> category = hint;
  if (auto it = vocabulary.find(key); it != vocabulary.end()) category = it->second;

  double weight = unknown_weight;
  if (category == ModifierCategory::kLighting) {
    weight = unit_from_text("lighting-mode", key) < 0.5 ? lighting_low : lighting_high;
  } else if (category) {
    auto it = category_weights.find(*category);
    weight = it != category_weights.end() ? it->second : unknown_weight;
  }
  const double u = 2.0 * unit_from_text("jitter", key) - 1.0;
  return std::clamp(weight * (1.0 + weight_jitter * u), 0.0, 1.0);
}

std::string SyntheticEffectProfile::digest() const {
  nlohmann::json j;
  for (const auto& [c, w] : category_weights) j["category_weights"][std::string(to_string(c))] = w;
  j["lighting_low"] = lighting_low;
  j["lighting_high"] = lighting_high;
  j["weight_jitter"] = weight_jitter;
  j["unknown_weight"] = unknown_weight;
  j["subject_ratio"] = subject_ratio;
  j["overrides"] = overrides;
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [text, c] : vocabulary) vocab[text] = to_string(c);
  j["vocabulary"] = vocab;
  j["version"] = 1;
  return sha256_hex(j.dump());
}

double repeated_weight(double weight, int repetition_count) {
  return std::min(1.0, weight * (1.0 + 0.25 * (repetition_count - 1)));
}

ParsedPrompt parse_synthetic_prompt(std::string_view prompt, const SyntheticEffectProfile& profile) {
  ParsedPrompt parsed;
  std::vector<ParsedPrompt::Group> raw;
  std::string_view head = prompt;

  if (const auto pos = prompt.find(kStyleMarker); pos != std::string_view::npos) {
    head = prompt.substr(0, pos);
    for (const std::string& part : split_groups(prompt.substr(pos + kStyleMarker.size()))) {
      if (!part.empty()) raw.push_back({part, 1, ModifierCategory::kArtist});
    }
  }

  // Peel known modifiers off the end of the comma-separated head. Unknown
  // groups stay part of the base content.
  std::vector<std::string> parts = split_groups(head);
  std::vector<ParsedPrompt::Group> tail;
  while (parts.size() > 1) {
    const auto known = profile.vocabulary.find(lower(parts.back()));
    if (known == profile.vocabulary.end()) break;
    tail.push_back({parts.back(), 1, known->second});
    parts.pop_back();
  }
  std::string base;
  for (std::size_t i = 0; i < parts.size(); ++i) base += (i ? ", " : "") + parts[i];

  // Space-joined suffixes ("{base} {modifier}").
  bool stripped = true;
  while (stripped) {
    stripped = false;
    const std::string lowered = lower(base);
    std::size_t best = 0;
    const std::pair<const std::string, ModifierCategory>* match = nullptr;
    for (const auto& entry : profile.vocabulary) {
      const std::string& text = entry.first;
      if (text.size() + 1 < lowered.size() && text.size() > best && lowered.ends_with(text) &&
          lowered[lowered.size() - text.size() - 1] == ' ') {
        best = text.size();
        match = &entry;
      }
    }
    if (match) {
      tail.push_back({base.substr(base.size() - best), 1, match->second});
      base = std::string(trim(std::string_view(base).substr(0, base.size() - best)));
      stripped = true;
    }
  }

  std::reverse(tail.begin(), tail.end());
  tail.insert(tail.end(), raw.begin(), raw.end());
  for (auto& group : tail) {
    if (!parsed.groups.empty() && lower(parsed.groups.back().text) == lower(group.text)) {
      ++parsed.groups.back().count;
    } else {
      parsed.groups.push_back(std::move(group));
    }
  }
  parsed.base = std::string(trim(base));
  return parsed;
}

Image synthetic_generate(const GenerationSpec& spec, std::string_view prompt, const SyntheticEffectProfile& profile) {
  spec.validate();
  profile.validate();
  const ParsedPrompt parsed = parse_synthetic_prompt(prompt, profile);
  Image image = render_base(spec, parsed.base, profile.subject_ratio);
  for (const auto& group : parsed.groups) {
    const double w = repeated_weight(profile.weight_for(group.text, group.category), group.count);
    apply_group(image, spec, group.text, w, profile.subject_ratio);
  }
  return image;
}

SyntheticBackend::SyntheticBackend(SyntheticEffectProfile profile) : profile_(std::move(profile)) {
  profile_.validate();
  model_id_ = "synthetic-v1+" + profile_.digest().substr(0, 12);
}

Image SyntheticBackend::generate(const GenerationSpec& spec, const std::string& prompt) {
  return synthetic_generate(spec, prompt, profile_);
}

}  // namespace promptlens
