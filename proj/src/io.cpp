#include "alab/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

namespace alab::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Unique per call so concurrent writers never share a temporary.
  static thread_local std::mt19937_64 tmp_rng{std::random_device{}()};
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(tmp_rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) { write_file_atomic(path, doc.dump(2) + "\n"); }

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

namespace {

void append_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

double read_le(const char* p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace

void BlobWriter::add(std::string name, std::span<const double> values, std::vector<std::size_t> shape) {
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  if (count != values.size()) {
    throw std::invalid_argument("BlobWriter: shape of '" + name + "' does not match value count");
  }
  arrays_.push_back({{"name", std::move(name)},
                     {"offset", bytes_.size()},
                     {"count", values.size()},
                     {"shape", shape}});
  bytes_.reserve(bytes_.size() + 8 * values.size());
  for (double v : values) append_le(bytes_, v);
}

json BlobWriter::manifest(const std::string& file_name) const {
  return {{"file", file_name},
          {"bytes", bytes_.size()},
          {"sha256", sha256_hex(bytes_)},
          {"encoding", "f64-le-row-major"},
          {"arrays", arrays_}};
}

BlobReader::BlobReader(const fs::path& dir, const json& blob_manifest) {
  const fs::path file = dir / blob_manifest.at("file").get<std::string>();
  origin_ = file.string();
  bytes_ = read_file(file);
  if (bytes_.size() != blob_manifest.at("bytes").get<std::size_t>()) {
    throw FormatError(origin_ + ": blob size mismatch");
  }
  if (blob_manifest.contains("sha256") && sha256_hex(bytes_) != blob_manifest["sha256"].get<std::string>()) {
    throw FormatError(origin_ + ": blob hash mismatch");
  }
  arrays_ = blob_manifest.at("arrays");
}

bool BlobReader::has(std::string_view name) const {
  for (const auto& a : arrays_) {
    if (a.at("name").get<std::string>() == name) return true;
  }
  return false;
}

std::vector<double> BlobReader::get(std::string_view name, std::size_t expected_count) const {
  for (const auto& a : arrays_) {
    if (a.at("name").get<std::string>() != name) continue;
    const auto offset = a.at("offset").get<std::size_t>();
    const auto count = a.at("count").get<std::size_t>();
    if (count != expected_count) {
      throw FormatError(origin_ + ": array '" + std::string(name) + "' has " + std::to_string(count) +
                        " values, expected " + std::to_string(expected_count));
    }
    if (offset + 8 * count > bytes_.size()) {
      throw FormatError(origin_ + ": array '" + std::string(name) + "' overruns blob");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = read_le(bytes_.data() + offset + 8 * i);
    return out;
  }
  throw FormatError(origin_ + ": missing array '" + std::string(name) + "'");
}

std::vector<json> read_ndjson(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

std::string fmt_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("csv: no column '" + std::string(name) + "'");
}

CsvTable read_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  CsvTable table;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      auto pos = s.find(',', start);
      out.push_back(s.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return out;
  };
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty csv");
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != table.header.size()) throw FormatError(path.string() + ": ragged csv row");
    table.rows.push_back(std::move(row));
  }
  return table;
}

json to_json(std::span<const double> v) { return json(std::vector<double>(v.begin(), v.end())); }

std::vector<double> vector_from_json(const json& j, std::string_view what) {
  if (!j.is_array()) throw FormatError(std::string(what) + ": expected array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& e : j) {
    if (!e.is_number()) throw FormatError(std::string(what) + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace alab::io
