#include "fairtranslate/config.hpp"

#include <fstream>
#include <sstream>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open config file " + path);

  RunConfig config;
  std::string section = "general";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw FormatError(path + ":" + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": empty section name");
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    config.sections_[section][key] = value;
  }
  return config;
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

bool RunConfig::has(const std::string& section, const std::string& key) const {
  return lookup(section, key).has_value();
}

std::optional<std::string> RunConfig::lookup(const std::string& section,
                                             const std::string& key) const {
  auto sit = sections_.find(section);
  if (sit == sections_.end()) return std::nullopt;
  auto kit = sit->second.find(key);
  if (kit == sit->second.end()) return std::nullopt;
  return kit->second;
}

std::string RunConfig::get_str(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return lookup(section, key).value_or(fallback);
}

int RunConfig::get_int(const std::string& section, const std::string& key, int fallback) const {
  auto v = lookup(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const int value = std::stoi(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw ValidationError(section + "." + key, "'" + *v + "' is not an integer");
  }
}

double RunConfig::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
  auto v = lookup(section, key);
  if (!v) return fallback;
  try {
    return std::stod(*v);
  } catch (const std::exception&) {
    throw ValidationError(section + "." + key, "'" + *v + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& section, const std::string& key,
                         bool fallback) const {
  auto v = lookup(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ValidationError(section + "." + key, "'" + *v + "' is not a boolean");
}

std::uint64_t RunConfig::get_u64(const std::string& section, const std::string& key,
                                 std::uint64_t fallback) const {
  auto v = lookup(section, key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t value = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw ValidationError(section + "." + key, "'" + *v + "' is not an unsigned integer");
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [section, entries] : sections_) {
    os << "[" << section << "]\n";
    for (const auto& [key, value] : entries) os << key << " = " << value << "\n";
    os << "\n";
  }
  return os.str();
}

void RunConfig::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write config " + path);
  os << serialize();
}

}  // namespace fairtranslate
