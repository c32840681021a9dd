#pragma once

#include <filesystem>
#include <functional>
#include <istream>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace toneshift {

using json = nlohmann::json;

enum class Compression { none, gzip, zstd, bzip2 };

Compression detect_compression(const std::filesystem::path& path);

// Opens a file for line-oriented reading, transparently decompressing
// .gz, .zst and .bz2 inputs.
std::unique_ptr<std::istream> open_input(const std::filesystem::path& path);

void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::string_view)>& fn);

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers never
// see a half-written output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Expands a shell-style glob; a literal path that exists is returned as is.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

// Line-delimited JSON helpers.
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

// Shortest decimal representation that round-trips; used wherever byte-stable
// textual output of doubles matters.
std::string format_double(double value);
std::string format_fixed(double value, int decimals);

// Directory holding shipped data (lexicons, fixtures). The TONESHIFT_DATA_DIR
// environment variable overrides the build-time location.
std::filesystem::path data_dir();

}  // namespace toneshift
