#pragma once

// Strict reader for JSON config objects: every key must be consumed, and every
// error message carries the dotted path of the offending entry.

#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "alab/io.hpp"

namespace alab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigObject {
 public:
  ConfigObject(const io::json& j, std::string path);

  const std::string& path() const { return path_; }
  /// Key present with a non-null value.
  bool has(const std::string& key) const;
  /// Key present, possibly null.
  bool present(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(child(key) + ": missing required key");
    return convert<T>(key);
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    if (!j_.contains(key) || j_.at(key).is_null()) {
      used_.insert(key);
      return fallback;
    }
    return convert<T>(key);
  }

  template <class T>
  std::optional<T> optional(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  /// Nested object; missing keys yield an empty object.
  ConfigObject object(const std::string& key);
  /// Raw JSON value (marked consumed).
  const io::json& raw(const std::string& key);

  /// Throws ConfigError naming the first key that was never read.
  void finish() const;

  std::string child(const std::string& key) const { return path_ + "." + key; }
  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(child(key) + ": " + why);
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    used_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const io::json::exception&) {
      throw ConfigError(child(key) + ": wrong type");
    }
  }

  io::json j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace alab
