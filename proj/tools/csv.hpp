#pragma once

// Minimal RFC 4180 reader: header row, quoted fields, CRLF or LF.

#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

#include <lqglm/numerics.hpp>

namespace lqglm::cli {

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  // Column as numbers; InputError naming row and column otherwise.
  Vector numeric(std::size_t col) const;
};

std::vector<std::vector<std::string>> parse_csv(std::istream& in);

Table read_table(const std::string& path);

// Numeric matrix with an optional header row (skipped when its first
// field does not parse as a number).
Matrix read_matrix(const std::string& path);

bool parse_double(const std::string& s, double& out);

}  // namespace lqglm::cli
