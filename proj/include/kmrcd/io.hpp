#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kmrcd/kernel.hpp"
#include "kmrcd/types.hpp"

namespace kmrcd::io {

// Shortest-exact decimal form: %.17g round-trips every finite double.
[[nodiscard]] inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has no header row
  Matrix values;
};

namespace detail {

[[nodiscard]] inline std::string trim(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && (s[begin] == ' ' || s[begin] == '\t' || s[begin] == '\r')) ++begin;
  while (end > begin && (s[end - 1] == ' ' || s[end - 1] == '\t' || s[end - 1] == '\r')) --end;
  return s.substr(begin, end - begin);
}

[[nodiscard]] inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

[[nodiscard]] inline bool parse_double(const std::string& field, double& out) {
  if (field.empty()) return false;
  const char* begin = field.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + field.size();
}

}  // namespace detail

// Comma-separated numeric table. A first row whose cells do not all parse
// as numbers is taken as the header.
[[nodiscard]] inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    raw.push_back(detail::split_fields(line));
  }
  if (raw.empty()) throw std::runtime_error(path + " contains no data");

  CsvTable table;
  std::size_t first_data = 0;
  {
    double tmp = 0.0;
    bool all_numeric = true;
    for (const auto& cell : raw[0]) {
      if (!detail::parse_double(cell, tmp)) {
        all_numeric = false;
        break;
      }
    }
    if (!all_numeric) {
      table.header = raw[0];
      first_data = 1;
    }
  }
  if (first_data >= raw.size()) throw std::runtime_error(path + " contains a header but no rows");

  const std::size_t cols = raw[first_data].size();
  if (!table.header.empty() && table.header.size() != cols) {
    throw std::runtime_error(path + ": header has " + std::to_string(table.header.size()) +
                             " fields but row 1 has " + std::to_string(cols));
  }
  const std::size_t n_rows = raw.size() - first_data;
  table.values.resize(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& fields = raw[first_data + r];
    if (fields.size() != cols) {
      throw std::runtime_error(path + ": row " + std::to_string(r + 1) + " has " +
                               std::to_string(fields.size()) + " fields, expected " +
                               std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      if (!detail::parse_double(fields[c], v)) {
        throw std::runtime_error(path + ": row " + std::to_string(r + 1) + ", column " +
                                 std::to_string(c + 1) + " is not numeric: '" + fields[c] + "'");
      }
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return table;
}

inline void write_csv(const std::string& path, const Matrix& values,
                      const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (!header.empty()) {
    if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
      throw std::invalid_argument("header width does not match the matrix");
    }
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c) out << ',';
      out << header[c];
    }
    out << '\n';
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << format_value(values(r, c));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

// Precomputed kernel matrix from disk. The matrix must be square and
// symmetric to a relative 1e-10; eigenvalues below -1e-8 of the largest are
// rejected, while small negative ripple is clamped to zero and the matrix
// reconstructed.
[[nodiscard]] inline GramMatrix load_gram_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const Matrix& k = table.values;
  if (k.rows() != k.cols()) {
    throw std::runtime_error(path + ": kernel matrix must be square, got " +
                             std::to_string(k.rows()) + "x" + std::to_string(k.cols()));
  }
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  if (asym > config::kSymmetryTol * scale) {
    throw std::runtime_error(path + ": kernel matrix is not symmetric (max deviation " +
                             format_value(asym) + ")");
  }
  Matrix sym = 0.5 * (k + k.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Vector& lam = eig.eigenvalues();
  const double lmax = std::max(lam(lam.size() - 1), 0.0);
  const double floor = -config::kPsdEigenTol * std::max(lmax, 1.0);
  if (lam(0) < floor) {
    throw std::runtime_error(path + ": kernel matrix is not positive semidefinite (eigenvalue " +
                             format_value(lam(0)) + ")");
  }
  if (lam(0) < 0.0) {
    const Vector clamped = lam.cwiseMax(0.0);
    sym = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
    sym = 0.5 * (sym + sym.transpose()).eval();
  }
  return GramMatrix{sym, GramKind::raw};
}

}  // namespace kmrcd::io
