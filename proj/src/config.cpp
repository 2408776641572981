#include "alab/config.hpp"

namespace alab {

ConfigObject::ConfigObject(const io::json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (j_.is_null()) j_ = io::json::object();
  if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
}

bool ConfigObject::has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

ConfigObject ConfigObject::object(const std::string& key) {
  used_.insert(key);
  if (!j_.contains(key)) return ConfigObject(io::json::object(), child(key));
  return ConfigObject(j_.at(key), child(key));
}

const io::json& ConfigObject::raw(const std::string& key) {
  if (!j_.contains(key)) throw ConfigError(child(key) + ": missing required key");
  used_.insert(key);
  return j_.at(key);
}

void ConfigObject::finish() const {
  for (const auto& [key, value] : j_.items()) {
    if (!used_.count(key)) throw ConfigError(child(key) + ": unknown key");
  }
}

}  // namespace alab
