// Minimal RFC 4180 style CSV output with 12 significant digits.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace qhmm {

using CsvCell = std::variant<std::string, double, long long>;

std::string csv_number(double x);
std::string csv_quote(const std::string& field);

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void comment(const std::string& text);
  void header(const std::vector<std::string>& columns);
  void row(const std::vector<CsvCell>& cells);

 private:
  std::ostream& out_;
};

std::string fnv1a64_hex(const std::string& bytes);

}  // namespace qhmm
