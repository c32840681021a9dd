#include "toneshift/embed.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <mutex>

#include <unicode/uchar.h>

#include "toneshift/error.hpp"
#include "toneshift/io.hpp"
#include "toneshift/rng.hpp"
#include "toneshift/text.hpp"

namespace toneshift::embed {

static_assert(std::endian::native == std::endian::little,
              "cache and checkpoint payloads are written in host order");

namespace {

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_word_cp(char32_t cp) { return u_isalnum(static_cast<UChar32>(cp)); }

}  // namespace

std::vector<std::string> hash_tokens(std::string_view input) {
  std::u32string cps = text::decode_utf8(text::to_lower(input));
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (size_t i = 0; i < cps.size(); ++i) {
    char32_t cp = cps[i];
    if (is_word_cp(cp)) {
      text::append_utf8(word, cp);
    } else if ((cp == U'\'' || cp == 0x2019) && !word.empty() && i + 1 < cps.size() &&
               is_word_cp(cps[i + 1])) {
      text::append_utf8(word, cp);
    } else if (text::is_space(cp) || u_iscntrl(static_cast<UChar32>(cp))) {
      flush();
    } else {
      flush();
      std::string mark;
      text::append_utf8(mark, cp);
      out.push_back(std::move(mark));
    }
  }
  flush();
  return out;
}

HashEmbedder::HashEmbedder(uint64_t seed, size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw InvalidArgument("hash embedder needs a positive dimension");
}

std::string HashEmbedder::provider_id() const {
  return "hash-v1:seed=" + std::to_string(seed_) + ":dim=" + std::to_string(dim_);
}

Embedding HashEmbedder::embed(std::string_view input) const {
  Embedding e;
  e.provider_id = provider_id();
  e.text_hash = sha256(input);
  e.vector.assign(dim_, 0.0f);

  std::string text = text::html_unescape(input);
  auto tokens = hash_tokens(text);
  if (tokens.empty()) {
    e.empty = true;
    return e;
  }
  const uint64_t salt = splitmix64(seed_);
  std::vector<double> acc(dim_, 0.0);
  auto add = [&](std::string_view feature, double weight) {
    uint64_t h = splitmix64(fnv1a64(feature) ^ salt);
    size_t slot = static_cast<size_t>(h % dim_);
    acc[slot] += ((h >> 40) & 1) ? weight : -weight;
  };
  for (size_t i = 0; i < tokens.size(); ++i) {
    add("u:" + tokens[i], 1.0);
    if (i + 1 < tokens.size()) add("b:" + tokens[i] + " " + tokens[i + 1], 1.0);
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    e.empty = true;
    return e;
  }
  for (size_t i = 0; i < dim_; ++i) e.vector[i] = static_cast<float>(acc[i] / norm);
  return e;
}

std::unique_ptr<Embedder> make_embedder(const std::string& provider, uint64_t seed,
                                        const std::filesystem::path& asset_dir) {
  if (provider == "hash") return std::make_unique<HashEmbedder>(seed);
  if (provider == "transformer") {
    std::filesystem::path dir = asset_dir;
    if (dir.empty()) {
      const char* env = std::getenv(kModelDirEnv);
      if (!env || !*env) {
        throw ProviderUnavailable(std::string("transformer provider needs ") + kModelDirEnv +
                                  " or an explicit asset directory");
      }
      dir = env;
    }
    return TransformerEmbedder::load(dir);
  }
  throw InvalidArgument("unknown embedding provider: " + provider);
}

// ---------------------------------------------------------------------------
// cache

namespace {

constexpr char kCacheMagic[8] = {'T', 'S', 'E', 'M', 'B', '0', '0', '1'};
constexpr char kIndexMagic[8] = {'T', 'S', 'I', 'D', 'X', '0', '0', '1'};
constexpr uint64_t kHeaderSize = 16;

std::string key_string(const Sha256& key) {
  return std::string(reinterpret_cast<const char*>(key.data()), key.size());
}

void pread_all(int fd, void* buf, size_t n, uint64_t offset) {
  auto* p = static_cast<char*>(buf);
  while (n > 0) {
    ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got <= 0) throw IoFailure("short read from embedding cache");
    p += got;
    n -= static_cast<size_t>(got);
    offset += static_cast<uint64_t>(got);
  }
}

void pwrite_all(int fd, const void* buf, size_t n, uint64_t offset) {
  const auto* p = static_cast<const char*>(buf);
  while (n > 0) {
    ssize_t put = ::pwrite(fd, p, n, static_cast<off_t>(offset));
    if (put <= 0) throw IoFailure("short write to embedding cache");
    p += put;
    n -= static_cast<size_t>(put);
    offset += static_cast<uint64_t>(put);
  }
}

std::filesystem::path index_path(const std::filesystem::path& p) {
  auto idx = p;
  idx += ".idx";
  return idx;
}

}  // namespace

Sha256 cache_key(std::string_view provider_id, std::string_view text) {
  Sha256Builder b;
  b.update(provider_id);
  b.update(std::string_view("\0", 1));
  b.update(text);
  return b.finish();
}

EmbeddingCache::EmbeddingCache(const std::filesystem::path& path, size_t dim, Mode mode)
    : path_(path), dim_(dim), mode_(mode) {
  if (dim == 0) throw InvalidArgument("cache dimension must be positive");
  if (mode == Mode::read_only) {
    if (!std::filesystem::exists(path)) return;
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  } else {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  }
  if (fd_ < 0) throw IoFailure("cannot open embedding cache " + path.string());
  if (mode == Mode::read_write && ::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw IoFailure("embedding cache " + path.string() + " is held by another writer");
  }

  struct stat st {};
  ::fstat(fd_, &st);
  uint64_t size = static_cast<uint64_t>(st.st_size);
  if (size == 0 && mode == Mode::read_write) {
    char header[kHeaderSize] = {};
    std::memcpy(header, kCacheMagic, 8);
    uint32_t d = static_cast<uint32_t>(dim_);
    std::memcpy(header + 8, &d, 4);
    pwrite_all(fd_, header, kHeaderSize, 0);
    size = kHeaderSize;
  }
  if (size < kHeaderSize) throw CacheCorrupt("embedding cache header truncated: " + path.string());
  char header[kHeaderSize];
  pread_all(fd_, header, kHeaderSize, 0);
  if (std::memcmp(header, kCacheMagic, 8) != 0) {
    throw CacheCorrupt("not an embedding cache: " + path.string());
  }
  uint32_t stored_dim = 0;
  std::memcpy(&stored_dim, header + 8, 4);
  if (stored_dim != dim_) {
    throw DimensionMismatch("cache " + path.string() + " holds " + std::to_string(stored_dim) +
                            "-d vectors, expected " + std::to_string(dim_));
  }
  end_ = kHeaderSize;
  if (!load_index()) {
    index_.clear();
    end_ = kHeaderSize;
  }
  scan_from(end_);
}

EmbeddingCache::~EmbeddingCache() {
  if (fd_ < 0) return;
  if (mode_ == Mode::read_write) {
    try {
      write_index();
    } catch (...) {
    }
  }
  ::close(fd_);
}

bool EmbeddingCache::load_index() {
  auto idx = index_path(path_);
  if (!std::filesystem::exists(idx)) return false;
  std::string data;
  try {
    data = read_file(idx);
  } catch (const Error&) {
    return false;
  }
  if (data.size() < 24 || std::memcmp(data.data(), kIndexMagic, 8) != 0) return false;
  uint64_t covered = 0, count = 0;
  std::memcpy(&covered, data.data() + 8, 8);
  std::memcpy(&count, data.data() + 16, 8);
  struct stat st {};
  ::fstat(fd_, &st);
  if (covered > static_cast<uint64_t>(st.st_size) || (covered - kHeaderSize) % record_size() != 0 ||
      data.size() != 24 + count * 40 || count != (covered - kHeaderSize) / record_size()) {
    return false;
  }
  index_.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    const char* row = data.data() + 24 + i * 40;
    uint64_t offset = 0;
    std::memcpy(&offset, row + 32, 8);
    if (offset < kHeaderSize || offset >= covered) return false;
    index_.emplace(std::string(row, 32), offset);
  }
  end_ = covered;
  return true;
}

void EmbeddingCache::scan_from(uint64_t offset) {
  struct stat st {};
  ::fstat(fd_, &st);
  uint64_t size = static_cast<uint64_t>(st.st_size);
  const uint64_t rs = record_size();
  char key[32];
  while (offset + rs <= size) {
    pread_all(fd_, key, 32, offset);
    index_.emplace(std::string(key, 32), offset);
    offset += rs;
  }
  end_ = offset;
  // A torn final record (interrupted append) is dropped.
  if (offset < size && mode_ == Mode::read_write) {
    if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0) {
      throw IoFailure("cannot trim torn record in " + path_.string());
    }
  }
}

std::optional<std::vector<float>> EmbeddingCache::get(const Sha256& key) const {
  std::shared_lock lock(mu_);
  auto it = index_.find(key_string(key));
  if (it == index_.end()) return std::nullopt;
  std::vector<char> buf(record_size());
  pread_all(fd_, buf.data(), buf.size(), it->second);
  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  auto body = std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(buf.data()), buf.size() - 4);
  if (crc32(body) != stored_crc || std::memcmp(buf.data(), key.data(), 32) != 0) {
    throw CacheCorrupt("checksum mismatch in " + path_.string() + " at offset " +
                       std::to_string(it->second));
  }
  std::vector<float> out(dim_);
  std::memcpy(out.data(), buf.data() + 32, dim_ * 4);
  return out;
}

bool EmbeddingCache::contains(const Sha256& key) const {
  std::shared_lock lock(mu_);
  return index_.count(key_string(key)) > 0;
}

size_t EmbeddingCache::size() const {
  std::shared_lock lock(mu_);
  return index_.size();
}

void EmbeddingCache::put(const Sha256& key, std::span<const float> values) {
  if (mode_ != Mode::read_write) throw IoFailure("embedding cache opened read-only");
  if (values.size() != dim_) {
    throw DimensionMismatch("cache expects " + std::to_string(dim_) + " values, got " +
                            std::to_string(values.size()));
  }
  std::unique_lock lock(mu_);
  std::string k = key_string(key);
  if (index_.count(k)) return;
  std::vector<char> buf(record_size());
  std::memcpy(buf.data(), key.data(), 32);
  std::memcpy(buf.data() + 32, values.data(), dim_ * 4);
  uint32_t c = crc32(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(buf.data()), buf.size() - 4));
  std::memcpy(buf.data() + buf.size() - 4, &c, 4);
  pwrite_all(fd_, buf.data(), buf.size(), end_);
  index_.emplace(std::move(k), end_);
  end_ += record_size();
}

void EmbeddingCache::write_index() const {
  if (mode_ != Mode::read_write) return;
  std::shared_lock lock(mu_);
  std::vector<std::pair<uint64_t, const std::string*>> rows;
  rows.reserve(index_.size());
  for (const auto& [k, off] : index_) rows.emplace_back(off, &k);
  std::sort(rows.begin(), rows.end());
  std::string out(24 + rows.size() * 40, '\0');
  std::memcpy(out.data(), kIndexMagic, 8);
  uint64_t covered = end_, count = rows.size();
  std::memcpy(out.data() + 8, &covered, 8);
  std::memcpy(out.data() + 16, &count, 8);
  for (size_t i = 0; i < rows.size(); ++i) {
    std::memcpy(out.data() + 24 + i * 40, rows[i].second->data(), 32);
    std::memcpy(out.data() + 24 + i * 40 + 32, &rows[i].first, 8);
  }
  write_file_atomic(index_path(path_), out);
}

Embedding get_or_compute(EmbeddingCache* cache, std::string_view text, const Embedder& provider) {
  if (!cache || text::trim(text).empty()) return provider.embed(text);
  if (cache->dim() != provider.dim()) {
    throw DimensionMismatch("cache dimension differs from provider " + provider.provider_id());
  }
  Sha256 key = cache_key(provider.provider_id(), text);
  if (auto hit = cache->get(key)) {
    Embedding e;
    e.vector = std::move(*hit);
    e.provider_id = provider.provider_id();
    e.text_hash = sha256(text);
    return e;
  }
  Embedding e = provider.embed(text);
  for (float v : e.vector) {
    if (!std::isfinite(v)) throw EncodeFailure("non-finite embedding from " + provider.provider_id());
  }
  if (!e.empty) cache->put(key, e.vector);
  return e;
}

}  // namespace toneshift::embed
