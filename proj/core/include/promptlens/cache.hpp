#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "promptlens/image.hpp"

namespace promptlens {

/// Content-addressed image store.
///
/// Layout: `<dir>/<content_hash>.png` plus `<dir>/index.jsonl`, an
/// append-only log mapping the (spec, prompt) key digest to a content hash.
/// Files that fail verification are moved to `<dir>/quarantine/`.
class ImageCache {
 public:
  explicit ImageCache(std::filesystem::path dir);

  /// Digest of the canonical JSON form of (spec, prompt).
  static std::string key_digest(const GenerationSpec& spec, const std::string& prompt);

  /// Throws kCacheCorrupt when the stored pixels do not hash to the indexed
  /// value; the entry is quarantined first.
  std::optional<ImageRecord> lookup(const GenerationSpec& spec, const std::string& prompt);
  void store(const ImageRecord& record);

  /// Reads and verifies an image by content hash. Throws kNotFound or
  /// kCacheCorrupt.
  Image read_image(const std::string& content_hash);
  bool contains_image(const std::string& content_hash) const;
  std::filesystem::path image_path(const std::string& content_hash) const;

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  struct Entry {
    std::string content_hash;
    GenerationSpec spec;
    std::string prompt;
    std::string created_at;
  };

  void load_index();
  Image read_verified(const std::string& content_hash);
  void quarantine(const std::string& content_hash);

  std::filesystem::path dir_;
  std::mutex mutex_;
  std::map<std::string, Entry> index_;
};

/// Writes `bytes` to `target` via a unique temporary file and rename.
void write_file_atomic(const std::filesystem::path& target, std::string_view bytes);

}  // namespace promptlens
