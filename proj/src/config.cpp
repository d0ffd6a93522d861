#include "grainfuse/config.hpp"

#include <fstream>
#include <sstream>

#include "grainfuse/errors.hpp"

namespace grainfuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse_text(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Config::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string* Config::find(const std::string& key) const {
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = find(key);
  resolved_[key] = v ? *v : fallback;
  return resolved_[key];
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* v = find(key);
  if (!v) {
    resolved_[key] = std::to_string(fallback);
    return fallback;
  }
  std::size_t used = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size()) throw ConfigError("key '" + key + "' expects an integer, got '" + *v + "'");
  resolved_[key] = *v;
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto* v = find(key);
  if (!v) {
    std::ostringstream os;
    os.precision(17);
    os << fallback;
    resolved_[key] = os.str();
    return fallback;
  }
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(*v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v->size()) throw ConfigError("key '" + key + "' expects a number, got '" + *v + "'");
  resolved_[key] = *v;
  return out;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto* v = find(key);
  if (!v) {
    resolved_[key] = fallback ? "true" : "false";
    return fallback;
  }
  if (*v == "true" || *v == "1" || *v == "yes") return resolved_[key] = *v, true;
  if (*v == "false" || *v == "0" || *v == "no") return resolved_[key] = *v, false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + *v + "'");
}

std::string Config::require_string(const std::string& key) const {
  if (!find(key)) throw ConfigError("missing required config key '" + key + "'");
  return get_string(key, "");
}

std::int64_t Config::require_int(const std::string& key) const {
  if (!find(key)) throw ConfigError("missing required config key '" + key + "'");
  return get_int(key, 0);
}

std::string Config::dump() const {
  std::map<std::string, std::string> all = resolved_;
  for (const auto& [k, v] : values_) all.emplace(k, v);
  std::ostringstream os;
  for (const auto& [k, v] : all) os << k << " = " << v << '\n';
  return os.str();
}

void Config::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << dump();
}

}  // namespace grainfuse
