#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "nblora/errors.hpp"
#include "nblora/matrix.hpp"

namespace nblora {

/// Shortest-safe decimal for a double: 17 significant digits, which
/// round-trips through strtod bit-exactly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Matrix CSV: header line "rows,cols", then one comma-separated line per row.

inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  os << m.rows() << ',' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline std::string to_csv(const Matrix& m) {
  std::ostringstream os;
  write_matrix_csv(os, m);
  return os.str();
}

namespace detail {

inline std::size_t parse_dim(const std::string& tok) {
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (errno != 0 || end == tok.c_str() || *end != '\0' || v < 0) {
    throw ConfigError("matrix csv: bad dimension '" + tok + "'");
  }
  return static_cast<std::size_t>(v);
}

inline std::string strip_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace detail

inline Matrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("matrix csv: empty input");
  line = detail::strip_cr(line);
  const auto comma = line.find(',');
  if (comma == std::string::npos) {
    throw ConfigError("matrix csv: header must be 'rows,cols'");
  }
  const std::size_t rows = detail::parse_dim(line.substr(0, comma));
  const std::size_t cols = detail::parse_dim(line.substr(comma + 1));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!std::getline(is, line)) {
      throw ConfigError("matrix csv: expected " + std::to_string(rows) +
                        " rows, got " + std::to_string(i));
    }
    line = detail::strip_cr(line);
    std::size_t pos = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const auto next = line.find(',', pos);
      const bool last = (j + 1 == cols);
      if (last != (next == std::string::npos)) {
        throw ConfigError("matrix csv: row " + std::to_string(i) +
                          " has the wrong number of fields");
      }
      const std::string tok =
          line.substr(pos, last ? std::string::npos : next - pos);
      char* end = nullptr;
      const double x = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw ConfigError("matrix csv: bad number '" + tok + "'");
      }
      m(i, j) = x;
      pos = next + 1;
    }
  }
  if (!all_finite(m)) throw ConfigError("matrix csv: non-finite entry");
  return m;
}

inline Matrix from_csv(const std::string& text) {
  std::istringstream is(text);
  return read_matrix_csv(is);
}

inline void save_matrix_csv(const std::filesystem::path& path,
                            const Matrix& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for write");
  write_matrix_csv(os, m);
}

inline Matrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + path.string() + "'");
  return read_matrix_csv(is);
}

}  // namespace nblora
