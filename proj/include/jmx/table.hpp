#pragma once

// Column-oriented string table read from CSV (RFC-4180 quoting).

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace jmx {

class Table {
 public:
  Table() = default;
  Table(std::vector<std::string> names, std::vector<std::vector<std::string>> columns,
        std::string source = "");

  std::size_t rows() const { return columns_.empty() ? 0 : columns_.front().size(); }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& source() const { return source_; }

  bool has(const std::string& name) const;
  /// Throws missing-column.
  std::size_t index(const std::string& name) const;
  const std::vector<std::string>& column(const std::string& name) const;
  const std::string& cell(std::size_t row, const std::string& name) const;

  /// Parses a cell as a finite number; throws bad-value naming row and column.
  double number(std::size_t row, const std::string& name) const;
  std::vector<double> numbers(const std::string& name) const;

  /// True when every cell of the column parses as a number.
  bool is_numeric(const std::string& name) const;

  /// Distinct values in first-appearance order.
  std::vector<std::string> levels(const std::string& name) const;

  /// Rows selected by index, in the given order.
  Table select_rows(const std::vector<std::size_t>& rows) const;

  void add_column(const std::string& name, std::vector<std::string> values);

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<std::string>> columns_;
  std::string source_;
};

Table parse_csv(std::string_view text, const std::string& source = "<memory>");
Table read_csv(const std::string& path);
std::string format_csv(const Table& table);
void write_csv(const Table& table, const std::string& path);

/// Strict numeric parse; returns false for empty, partial or non-finite input.
bool parse_number(std::string_view text, double& out);

/// Shortest decimal text that round-trips the double.
std::string format_number(double value);

}  // namespace jmx
