#include "csv.hpp"

#include <charconv>
#include <fstream>

namespace lqglm::cli {

bool parse_double(const std::string& s, double& out) {
  std::size_t b = s.find_first_not_of(" \t");
  std::size_t e = s.find_last_not_of(" \t");
  if (b == std::string::npos) return false;
  const char* first = s.data() + b;
  const char* last = s.data() + e + 1;
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;  // current row has content
  char c;
  auto end_row = [&] {
    if (any || !field.empty()) {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
    }
    row.clear();
    field.clear();
    any = false;
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        break;
      default:
        field += c;
        any = true;
    }
  }
  if (quoted) throw InputError("malformed CSV: unterminated quoted field");
  end_row();
  return rows;
}

Table read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  auto rows = parse_csv(in);
  if (rows.empty()) throw InputError("no rows");
  Table t;
  t.header = std::move(rows.front());
  rows.erase(rows.begin());
  if (rows.empty()) throw InputError("no rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != t.header.size()) {
      throw InputError("malformed CSV: row " + std::to_string(i + 2) + " has " +
                       std::to_string(rows[i].size()) + " fields, header has " +
                       std::to_string(t.header.size()));
    }
  }
  t.rows = std::move(rows);
  return t;
}

std::size_t Table::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return j;
  }
  throw InputError("no column named '" + name + "'");
}

Vector Table::numeric(std::size_t col) const {
  Vector v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double d;
    if (!parse_double(rows[i][col], d)) {
      throw InputError("malformed CSV: row " + std::to_string(i + 2) + ", column '" +
                       header[col] + "': '" + rows[i][col] + "' is not a number");
    }
    v(static_cast<Eigen::Index>(i)) = d;
  }
  return v;
}

Matrix read_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  auto rows = parse_csv(in);
  double probe;
  if (!rows.empty() && !rows.front().empty() && !parse_double(rows.front().front(), probe)) {
    rows.erase(rows.begin());
  }
  if (rows.empty()) throw InputError(path + ": no rows");
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw InputError(path + ": ragged rows");
    for (std::size_t j = 0; j < cols; ++j) {
      if (!parse_double(rows[i][j], m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))) {
        throw InputError(path + ": '" + rows[i][j] + "' is not a number");
      }
    }
  }
  return m;
}

}  // namespace lqglm::cli
