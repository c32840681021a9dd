#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace toneshift {

using Sha256 = std::array<uint8_t, 32>;

Sha256 sha256(std::string_view data);
Sha256 sha256(std::span<const uint8_t> data);
Sha256 sha256_file(const std::filesystem::path& path);

std::string to_hex(std::span<const uint8_t> bytes);
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

// Incremental hashing for streams that never live fully in memory.
class Sha256Builder {
 public:
  Sha256Builder();
  ~Sha256Builder();
  Sha256Builder(const Sha256Builder&) = delete;
  Sha256Builder& operator=(const Sha256Builder&) = delete;

  void update(std::string_view data);
  void update(std::span<const uint8_t> data);
  Sha256 finish();

 private:
  void* ctx_;
};

uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0);

}  // namespace toneshift
