#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace alab::io {

using json = nlohmann::json;

/// Raised for malformed or inconsistent files; the message names the path.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& doc);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Accumulates named little-endian f64 arrays into one blob and records their
/// byte offsets and shapes for the owning manifest.
class BlobWriter {
 public:
  void add(std::string name, std::span<const double> values, std::vector<std::size_t> shape);
  const std::string& bytes() const { return bytes_; }
  /// {"file", "bytes", "sha256", "arrays": [{name, offset, count, shape}...]}
  json manifest(const std::string& file_name) const;

 private:
  std::string bytes_;
  json arrays_ = json::array();
};

class BlobReader {
 public:
  /// Loads the blob referenced by `blob_manifest` relative to `dir` and checks
  /// its size and hash.
  BlobReader(const std::filesystem::path& dir, const json& blob_manifest);
  std::vector<double> get(std::string_view name, std::size_t expected_count) const;
  bool has(std::string_view name) const;

 private:
  std::string bytes_;
  json arrays_;
  std::string origin_;
};

/// Accumulates NDJSON lines in memory; flushed atomically.
class NdjsonLog {
 public:
  void append(const json& record) { text_ += record.dump() + "\n"; }
  const std::string& text() const { return text_; }
  void write(const std::filesystem::path& path) const { write_file_atomic(path, text_); }

 private:
  std::string text_;
};

std::vector<json> read_ndjson(const std::filesystem::path& path);

/// Fixed-format real for CSV output: shortest round-trip representation.
std::string fmt_real(double v);

/// Minimal CSV reader for files this tool writes (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(std::string_view name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

json to_json(std::span<const double> v);
std::vector<double> vector_from_json(const json& j, std::string_view what);

}  // namespace alab::io
