#include "gfra/config_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace gfra {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path);
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key + ": missing");
  return it->second;
}

int KeyValueConfig::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos, 0);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  }
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "inf" || v == "+inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  const std::string v = get_string(key);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    KeyValueConfig tmp;
    tmp.values_[key] = item;
    out.push_back(tmp.get_double(key));
  }
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of numbers");
  return out;
}

std::string KeyValueConfig::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

void write_matrix(const std::string& path, const MatrixFile& m) {
  if (path.empty()) throw std::runtime_error("write_matrix: empty path");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_matrix: cannot open '" + path + "'");
  os << "GFRA-MATRIX 1\n";
  os << "name " << m.name << '\n';
  os << "shape " << m.data.rows() << ' ' << m.data.cols() << '\n';
  os << "dtype complex128 row-major\n";
  for (const auto& [k, v] : m.meta) os << "meta " << k << ' ' << v << '\n';
  os << "end\n";
  for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) {
      const double v[2] = {m.data(r, c).real(), m.data(r, c).imag()};
      os.write(reinterpret_cast<const char*>(v), sizeof(v));
    }
  }
  if (!os) throw std::runtime_error("write_matrix: write failed for '" + path + "'");
}

MatrixFile read_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_matrix: cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);
  if (line != "GFRA-MATRIX 1") throw std::runtime_error("read_matrix: '" + path + "' is not a matrix file");
  MatrixFile m;
  Eigen::Index rows = -1, cols = -1;
  while (std::getline(is, line) && line != "end") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> m.name;
    } else if (key == "shape") {
      ls >> rows >> cols;
    } else if (key == "meta") {
      std::string k;
      ls >> k;
      std::string v;
      std::getline(ls, v);
      m.meta[k] = trim(v);
    }
  }
  if (line != "end" || rows < 0 || cols < 0) throw std::runtime_error("read_matrix: malformed header in '" + path + "'");
  m.data.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      double v[2];
      is.read(reinterpret_cast<char*>(v), sizeof(v));
      m.data(r, c) = Complex(v[0], v[1]);
    }
  }
  if (!is) throw std::runtime_error("read_matrix: truncated payload in '" + path + "'");
  return m;
}

}  // namespace gfra
