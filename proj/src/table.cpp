#include "jmx/table.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "jmx/error.hpp"

namespace jmx {

Table::Table(std::vector<std::string> names, std::vector<std::vector<std::string>> columns,
             std::string source)
    : names_(std::move(names)), columns_(std::move(columns)), source_(std::move(source)) {
  if (names_.size() != columns_.size())
    throw Error(ErrorCode::BadValue, "table: header and column count differ");
  for (const auto& c : columns_)
    if (c.size() != rows()) throw Error(ErrorCode::BadValue, "table: ragged columns");
}

bool Table::has(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

std::size_t Table::index(const std::string& name) const {
  for (std::size_t k = 0; k < names_.size(); ++k)
    if (names_[k] == name) return k;
  throw Error(ErrorCode::MissingColumn,
              "column '" + name + "' not found" + (source_.empty() ? "" : " in " + source_));
}

const std::vector<std::string>& Table::column(const std::string& name) const {
  return columns_[index(name)];
}

const std::string& Table::cell(std::size_t row, const std::string& name) const {
  return columns_[index(name)].at(row);
}

bool parse_number(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) return std::to_string(value);
  return std::string(buf, ptr);
}

double Table::number(std::size_t row, const std::string& name) const {
  const std::string& s = cell(row, name);
  double v = 0;
  if (!parse_number(s, v))
    throw Error(ErrorCode::BadValue, "non-numeric value '" + s + "' in column '" + name +
                                         "' at data row " + std::to_string(row + 1) +
                                         (source_.empty() ? "" : " of " + source_));
  return v;
}

std::vector<double> Table::numbers(const std::string& name) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = number(r, name);
  return out;
}

bool Table::is_numeric(const std::string& name) const {
  double v;
  for (const auto& s : column(name))
    if (!parse_number(s, v)) return false;
  return true;
}

std::vector<std::string> Table::levels(const std::string& name) const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : column(name))
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

Table Table::select_rows(const std::vector<std::size_t>& rows) const {
  std::vector<std::vector<std::string>> cols(names_.size());
  for (std::size_t c = 0; c < names_.size(); ++c) {
    cols[c].reserve(rows.size());
    for (std::size_t r : rows) cols[c].push_back(columns_[c].at(r));
  }
  return Table(names_, std::move(cols), source_);
}

void Table::add_column(const std::string& name, std::vector<std::string> values) {
  if (!names_.empty() && values.size() != rows())
    throw Error(ErrorCode::BadValue, "add_column: length mismatch");
  if (has(name)) {
    columns_[index(name)] = std::move(values);
    return;
  }
  names_.push_back(name);
  columns_.push_back(std::move(values));
}

namespace {

std::vector<std::vector<std::string>> split_records(std::string_view text,
                                                    const std::string& source) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(rec.size() == 1 && rec[0].empty())) records.push_back(std::move(rec));
    rec.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_record();
      ++line;
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted)
    throw Error(ErrorCode::ParseError, "unterminated quote in " + source + " near line " +
                                           std::to_string(line));
  if (!field.empty() || !rec.empty()) end_record();
  return records;
}

}  // namespace

Table parse_csv(std::string_view text, const std::string& source) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  auto records = split_records(text, source);
  if (records.empty()) throw Error(ErrorCode::EmptyTable, source + " is empty");
  std::vector<std::string> names = records.front();
  for (auto& n : names) {
    while (!n.empty() && n.back() == ' ') n.pop_back();
    while (!n.empty() && n.front() == ' ') n.erase(n.begin());
  }
  std::vector<std::vector<std::string>> cols(names.size());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != names.size())
      throw Error(ErrorCode::ParseError, source + ": data row " + std::to_string(r) + " has " +
                                             std::to_string(records[r].size()) +
                                             " fields, header has " +
                                             std::to_string(names.size()));
    for (std::size_t c = 0; c < names.size(); ++c) cols[c].push_back(std::move(records[r][c]));
  }
  if (cols.empty() || cols.front().empty())
    throw Error(ErrorCode::EmptyTable, source + " has no data rows");
  return Table(std::move(names), std::move(cols), source);
}

Table read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadValue, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

namespace {
std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}
}  // namespace

std::string format_csv(const Table& table) {
  std::string out;
  const auto& names = table.names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (c) out.push_back(',');
    out += quote_field(names[c]);
  }
  out.push_back('\n');
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (c) out.push_back(',');
      out += quote_field(table.cell(r, names[c]));
    }
    out.push_back('\n');
  }
  return out;
}

void write_csv(const Table& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::BadValue, "cannot write " + path);
  out << format_csv(table);
}

}  // namespace jmx
