#pragma once

// Minimal CSV writing with shortest round-trip number formatting.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

namespace momentfit {

inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

/// Quotes a field only when it contains a separator, quote or newline.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  CsvWriter& header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) cell(cols[i]);
    return end_row();
  }

  CsvWriter& cell(std::string_view s) {
    sep();
    os_ << csv_field(s);
    return *this;
  }
  CsvWriter& cell(const char* s) { return cell(std::string_view(s)); }
  CsvWriter& cell(const std::string& s) { return cell(std::string_view(s)); }

  template <class T>
    requires std::is_arithmetic_v<T>
  CsvWriter& cell(T v) {
    sep();
    if constexpr (std::is_same_v<T, bool>) os_ << (v ? "true" : "false");
    else if constexpr (std::is_integral_v<T>) os_ << v;
    else os_ << format_number(static_cast<double>(v));
    return *this;
  }

  CsvWriter& end_row() {
    os_ << '\n';
    first_ = true;
    return *this;
  }

 private:
  void sep() {
    if (!first_) os_ << ',';
    first_ = false;
  }

  std::ostream& os_;
  bool first_ = true;
};

}  // namespace momentfit
