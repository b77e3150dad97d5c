#include "promptlens/cache.hpp"

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "promptlens/error.hpp"
#include "promptlens/hash.hpp"

namespace fs = std::filesystem;

namespace promptlens {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

void write_file_atomic(const fs::path& target, std::string_view bytes) {
  static std::atomic<std::uint64_t> counter{0};
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(tid) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot rename into " + target.string());
  }
}

ImageCache::ImageCache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create cache directory " + dir_.string());
  load_index();
}

std::string ImageCache::key_digest(const GenerationSpec& spec, const std::string& prompt) {
  nlohmann::json key = spec;
  key["prompt"] = prompt;
  return sha256_hex(key.dump());
}

void ImageCache::load_index() {
  std::ifstream in(dir_ / "index.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A torn trailing line from an interrupted writer is ignored.
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("key") || !j.contains("content_hash")) continue;
    index_[j["key"].get<std::string>()] = Entry{j["content_hash"].get<std::string>(),
                                                j.value("spec", nlohmann::json::object()).get<GenerationSpec>(),
                                                j.value("prompt", ""), j.value("created_at", "")};
  }
}

fs::path ImageCache::image_path(const std::string& content_hash) const { return dir_ / (content_hash + ".png"); }

bool ImageCache::contains_image(const std::string& content_hash) const {
  return fs::exists(image_path(content_hash));
}

void ImageCache::quarantine(const std::string& content_hash) {
  std::error_code ec;
  fs::create_directories(dir_ / "quarantine", ec);
  fs::rename(image_path(content_hash), dir_ / "quarantine" / (content_hash + ".png"), ec);
}

Image ImageCache::read_verified(const std::string& content_hash) {
  const fs::path path = image_path(content_hash);
  if (!fs::exists(path)) throw Error(ErrorCode::kNotFound, "no cached image " + content_hash);
  const std::string bytes = read_file(path);
  Image image;
  try {
    image = decode_png(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()),
                                                      bytes.size()));
  } catch (const Error&) {
    quarantine(content_hash);
    throw Error(ErrorCode::kCacheCorrupt, "cached image " + content_hash + " does not decode", path.string());
  }
  if (promptlens::content_hash(image) != content_hash) {
    quarantine(content_hash);
    throw Error(ErrorCode::kCacheCorrupt, "cached image " + content_hash + " fails hash verification",
                path.string());
  }
  return image;
}

Image ImageCache::read_image(const std::string& content_hash) { return read_verified(content_hash); }

std::optional<ImageRecord> ImageCache::lookup(const GenerationSpec& spec, const std::string& prompt) {
  const std::string key = key_digest(spec, prompt);
  Entry entry;
  {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    entry = it->second;
  }
  if (!contains_image(entry.content_hash)) return std::nullopt;
  Image image;
  try {
    image = read_verified(entry.content_hash);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCacheCorrupt) {
      std::lock_guard lock(mutex_);
      index_.erase(key);
    }
    throw;
  }
  ImageRecord record;
  record.pixels = std::make_shared<const Image>(std::move(image));
  record.content_hash = entry.content_hash;
  record.spec = entry.spec;
  record.prompt = entry.prompt;
  record.created_at = entry.created_at;
  return record;
}

void ImageCache::store(const ImageRecord& record) {
  if (!record.verify()) {
    throw Error(ErrorCode::kInvalidArgument, "record hash does not match its pixels");
  }
  const fs::path path = image_path(record.content_hash);
  if (!fs::exists(path)) {
    const auto png = encode_png(record.image());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
  }
  const std::string key = key_digest(record.spec, record.prompt);
  nlohmann::json line{{"key", key},
                      {"content_hash", record.content_hash},
                      {"spec", record.spec},
                      {"prompt", record.prompt},
                      {"created_at", record.created_at}};
  std::lock_guard lock(mutex_);
  if (auto it = index_.find(key); it != index_.end() && it->second.content_hash == record.content_hash) return;
  std::ofstream out(dir_ / "index.jsonl", std::ios::app);
  if (!out) throw Error(ErrorCode::kIoError, "cannot append to cache index");
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "cache index append failed");
  index_[key] = Entry{record.content_hash, record.spec, record.prompt, record.created_at};
}

}  // namespace promptlens
