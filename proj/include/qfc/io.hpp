// Copyright 2026 The qfc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qfc/ito_algebra.hpp"
#include "qfc/operators.hpp"

namespace qfc {

using Json = nlohmann::ordered_json;

/// {"rows","cols","re":[...],"im":[...]}, row-major. Doubles are written in
/// shortest round-trip form, so to_json/from_json is exact.
inline Json matrix_to_json(const Matrix& m) {
  Json re = Json::array(), im = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      re.push_back(m(i, j).real());
      im.push_back(m(i, j).imag());
    }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("re"))
    throw Error(ErrorKind::Validation, "matrix object needs rows, cols, re");
  for (const auto& [key, _] : j.items())
    if (key != "rows" && key != "cols" && key != "re" && key != "im")
      throw Error(ErrorKind::Validation, "unknown matrix key '" + key + "'");
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (rows <= 0 || cols <= 0) throw Error(ErrorKind::Validation, "matrix rows and cols must be positive");
  const auto& re = j.at("re");
  const Json im = j.contains("im") ? j.at("im") : Json::array();
  const auto n = static_cast<std::size_t>(rows * cols);
  if (re.size() != n || (!im.empty() && im.size() != n))
    throw Error(ErrorKind::DimensionMismatch, "matrix entry count differs from rows*cols");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) {
      const auto k = static_cast<std::size_t>(i * cols + j2);
      m(i, j2) = cplx(re[k].get<double>(), im.empty() ? 0.0 : im[k].get<double>());
    }
  if (!all_finite(m)) throw Error(ErrorKind::NonFinite, "matrix has non-finite entries");
  return m;
}

inline Json real_matrix_to_json(const RealMatrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Nested arrays [[...], ...]; every row must have the same length.
inline RealMatrix real_matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::Validation, "real matrix must be a non-empty array of rows");
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  if (cols == 0) throw Error(ErrorKind::Validation, "real matrix rows must be non-empty arrays");
  RealMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw Error(ErrorKind::DimensionMismatch, "ragged real matrix");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) throw Error(ErrorKind::Validation, "real matrix entries must be numbers");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    }
  }
  if (!m.allFinite()) throw Error(ErrorKind::NonFinite, "real matrix has non-finite entries");
  return m;
}

inline RealVector real_vector_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Validation, "vector must be an array of numbers");
  RealVector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::Validation, "vector entries must be numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Json real_vector_to_json(const RealVector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Germ as {"dim","channels","labels":[...],"blocks":[[matrix,...],...]}.
inline Json germ_to_json(const GermMatrix& g) {
  Json labels = Json::array();
  for (std::size_t k = 0; k < g.blocks(); ++k) labels.push_back(g.label(k));
  Json blocks = Json::array();
  for (std::size_t mu = 0; mu < g.blocks(); ++mu) {
    Json row = Json::array();
    for (std::size_t nu = 0; nu < g.blocks(); ++nu) row.push_back(matrix_to_json(g.block(mu, nu)));
    blocks.push_back(std::move(row));
  }
  return Json{{"dim", g.dim()}, {"channels", g.channels()}, {"labels", std::move(labels)}, {"blocks", std::move(blocks)}};
}

inline GermMatrix germ_from_json(const Json& j) {
  const auto dim = j.at("dim").get<Eigen::Index>();
  const auto d = j.at("channels").get<std::size_t>();
  GermMatrix g(dim, d);
  const auto& blocks = j.at("blocks");
  if (blocks.size() != g.blocks()) throw Error(ErrorKind::DimensionMismatch, "germ block rows");
  for (std::size_t mu = 0; mu < g.blocks(); ++mu) {
    if (blocks[mu].size() != g.blocks()) throw Error(ErrorKind::DimensionMismatch, "germ block cols");
    for (std::size_t nu = 0; nu < g.blocks(); ++nu) g.set_block(mu, nu, matrix_from_json(blocks[mu][nu]));
  }
  return g;
}

/// Shortest-round-trip decimal text for a double.
inline std::string format_double(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

/// Minimal CSV writer; every value goes through format_double.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { write_row_text(header); }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw Error(ErrorKind::DimensionMismatch, "csv row width");
    std::vector<std::string> cells;
    cells.reserve(values.size());
    for (double v : values) cells.push_back(format_double(v));
    write_row_text(cells);
  }

  const std::string& str() const noexcept { return text_; }

 private:
  void write_row_text(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) text_ += ',';
      text_ += cells[k];
    }
    text_ += '\n';
  }

  std::size_t columns_;
  std::string text_;
};

/// Column names re_ij, im_ij for a dim x dim matrix, row-major.
inline std::vector<std::string> matrix_columns(Eigen::Index dim, const std::string& prefix = "") {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) {
      out.push_back(prefix + "re_" + std::to_string(i) + std::to_string(j));
      out.push_back(prefix + "im_" + std::to_string(i) + std::to_string(j));
    }
  return out;
}

inline void append_matrix(std::vector<double>& row, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      row.push_back(m(i, j).real());
      row.push_back(m(i, j).imag());
    }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Validation, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace qfc
