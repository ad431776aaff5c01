#pragma once

#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>

namespace vasense::csv {

// Fixed, locale-independent number formatting so reruns are byte-identical.
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void comment(std::ostream& os, std::string_view key, std::string_view value) {
  os << "# " << key << ": " << value << '\n';
}

inline void header(std::ostream& os, std::initializer_list<std::string_view> cols) {
  bool first = true;
  for (auto c : cols) {
    if (!first) os << ',';
    os << c;
    first = false;
  }
  os << '\n';
}

class Row {
 public:
  explicit Row(std::ostream& os) : os_(os) {}
  ~Row() { os_ << '\n'; }
  Row(const Row&) = delete;
  Row& operator=(const Row&) = delete;

  Row& operator<<(double v) { return put(num(v)); }
  Row& operator<<(int v) { return put(std::to_string(v)); }
  Row& operator<<(long long v) { return put(std::to_string(v)); }
  Row& operator<<(std::string_view v) { return put(v); }

 private:
  Row& put(std::string_view s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }

  std::ostream& os_;
  bool first_ = true;
};

}  // namespace vasense::csv
