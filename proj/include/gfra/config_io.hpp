#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gfra/types.hpp"

namespace gfra {

// Flat key/value configuration: one `key = value` per line, `#` comments.
// Keys are the field names of the config structs.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;  // accepts inf / -inf
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma separated

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
};

std::string format_double(double v);

// Self-describing matrix file: text header (shape, layout, free-form
// metadata) terminated by "end", then row-major complex128 payload.
struct MatrixFile {
  std::string name;
  CMatrix data;
  std::map<std::string, std::string> meta;
};

void write_matrix(const std::string& path, const MatrixFile& m);
MatrixFile read_matrix(const std::string& path);

}  // namespace gfra
