#pragma once

// JSON readers and writers for graphs, groups, Lipschitz data, samples,
// couplings and operator specs.

#include "invmono/core.hpp"
#include "invmono/dissipative.hpp"
#include "invmono/fitzpatrick.hpp"
#include "invmono/kirszbraun.hpp"
#include "invmono/mps.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace invmono::io {

using Json = nlohmann::ordered_json;

/// Malformed document; line and column are 1-based (0 when unknown).
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
      : InputError(what), line_(line), column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

inline Json parse(const std::string& text, const std::string& origin = "<input>") {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ParseError(origin + ": empty document", 1, 1);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    // Byte offset to line/column.
    const std::size_t offset = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < offset; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ParseError(origin + ":" + std::to_string(line) + ":" + std::to_string(column) + ": malformed JSON",
                     line, column);
  }
}

inline Json read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw InputError(std::string("missing field '") + key + "'");
  return j.at(key);
}

inline double to_number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw InputError(what + ": expected a number");
  return j.get<double>();
}

inline Vector to_vector(const Json& j, const std::string& what) {
  if (!j.is_array()) throw InputError(what + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_number(j[i], what);
  return v;
}

/// Array of rows; every row must have the same length.
inline Matrix to_matrix(const Json& j, const std::string& what, Eigen::Index cols = -1) {
  if (!j.is_array()) throw InputError(what + ": expected an array of rows");
  Matrix m;
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = to_vector(j[r], what);
    if (r == 0) {
      if (cols < 0) cols = row.size();
      m.resize(static_cast<Eigen::Index>(j.size()), cols);
    }
    if (row.size() != cols) throw InputError(what + ": row " + std::to_string(r) + " has the wrong length");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  if (j.empty()) m.resize(0, std::max<Eigen::Index>(cols, 0));
  return m;
}

inline Json from_vector(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Json from_matrix(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(from_vector(m.row(r).transpose()));
  return out;
}

inline Eigen::Index to_dim(const Json& j) {
  const double d = to_number(field(j, "dim"), "dim");
  if (d < 1 || d != std::floor(d)) throw InputError("dim must be a positive integer");
  return static_cast<Eigen::Index>(d);
}

// {"dim": d, "pairs": [[[x...],[v...]], ...]}
inline std::vector<fitzpatrick::Pair> pairs_from_json(const Json& j) {
  const Eigen::Index d = to_dim(j);
  const Json& pairs = field(j, "pairs");
  if (!pairs.is_array() || pairs.empty()) throw InputError("pairs must be a nonempty array");
  std::vector<fitzpatrick::Pair> out;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Json& p = pairs[k];
    if (!p.is_array() || p.size() != 2) throw InputError("pair " + std::to_string(k) + " must be [x, v]");
    Vector x = to_vector(p[0], "pair point");
    Vector v = to_vector(p[1], "pair value");
    if (x.size() != d || v.size() != d) throw InputError("pair " + std::to_string(k) + " has the wrong dimension");
    out.push_back({std::move(x), std::move(v)});
  }
  return out;
}

inline fitzpatrick::MonotoneGraph graph_from_json(const Json& j) {
  return fitzpatrick::MonotoneGraph::create(pairs_from_json(j));
}

inline Json to_json(const fitzpatrick::MonotoneGraph& g) {
  Json pairs = Json::array();
  for (const auto& p : g.pairs()) pairs.push_back(Json::array({from_vector(p.x), from_vector(p.v)}));
  return Json{{"dim", g.dim()}, {"pairs", std::move(pairs)}};
}

// {"dim": d, "matrices": [[[row], ...], ...]}
inline fitzpatrick::IsometryGroup group_from_json(const Json& j) {
  const Eigen::Index d = to_dim(j);
  const Json& mats = field(j, "matrices");
  if (!mats.is_array() || mats.empty()) throw InputError("matrices must be a nonempty array");
  std::vector<Matrix> elems;
  for (const auto& m : mats) {
    Matrix u = to_matrix(m, "group matrix");
    if (u.rows() != d || u.cols() != d) throw InputError("group matrix has the wrong shape");
    elems.push_back(std::move(u));
  }
  return fitzpatrick::IsometryGroup::generate(d, elems);
}

inline Json to_json(const fitzpatrick::IsometryGroup& g) {
  Json mats = Json::array();
  for (const auto& u : g.elements()) mats.push_back(from_matrix(u));
  return Json{{"dim", g.dim()}, {"matrices", std::move(mats)}};
}

// {"dim": d, "L": number, "sites": [[...]], "values": [[...]]}
inline kirszbraun::LipschitzData lipschitz_from_json(const Json& j) {
  const Eigen::Index d = to_dim(j);
  const Matrix sites = to_matrix(field(j, "sites"), "sites", d);
  const Matrix values = to_matrix(field(j, "values"), "values", d);
  if (sites.rows() == 0) throw InputError("sites must be nonempty");
  std::vector<Vector> ys, ws;
  for (Eigen::Index i = 0; i < sites.rows(); ++i) ys.push_back(sites.row(i).transpose());
  for (Eigen::Index i = 0; i < values.rows(); ++i) ws.push_back(values.row(i).transpose());
  return kirszbraun::LipschitzData::create(std::move(ys), std::move(ws), to_number(field(j, "L"), "L"));
}

inline Json to_json(const kirszbraun::LipschitzData& data) {
  Json sites = Json::array(), values = Json::array();
  for (const auto& y : data.sites()) sites.push_back(from_vector(y));
  for (const auto& w : data.values()) values.push_back(from_vector(w));
  return Json{{"dim", data.dim()}, {"L", data.lipschitz()}, {"sites", sites}, {"values", values}};
}

// {"level": m, "dim": d, "values": [[...], ...]}
inline mps::EmpiricalSample sample_from_json(const Json& j) {
  const double level = to_number(field(j, "level"), "level");
  if (level < 0 || level != std::floor(level)) throw InputError("level must be a nonnegative integer");
  const Eigen::Index d = to_dim(j);
  return {mps::DyadicSpace(static_cast<int>(level)), to_matrix(field(j, "values"), "values", d)};
}

inline Json to_json(const mps::EmpiricalSample& s) {
  return Json{{"level", s.level()}, {"dim", s.dim()}, {"values", from_matrix(s.values())}};
}

// {"order": N, "matrix": [[...]]}
inline mps::DoublyStochastic coupling_from_json(const Json& j) {
  const double order = to_number(field(j, "order"), "order");
  if (order < 1 || order != std::floor(order)) throw InputError("order must be a positive integer");
  const auto n = static_cast<Eigen::Index>(order);
  Matrix m = to_matrix(field(j, "matrix"), "matrix", n);
  if (m.rows() != n) throw InputError("coupling matrix must have order rows");
  return mps::DoublyStochastic::create(std::move(m), 1e-9);
}

inline Json to_json(const mps::DoublyStochastic& b) {
  return Json{{"order", b.order()}, {"matrix", from_matrix(b.matrix())}};
}

// {"lambda": l, "variant": "matrix", "matrix": [[...]]}
// {"lambda": l, "variant": "graph", "dim": d, "pairs": [...]}
// {"lambda": l, "variant": "builtin:<name>", "atoms": N, "dim": d}
inline dissipative::OperatorSpec operator_from_json(const Json& j) {
  const double lambda = to_number(field(j, "lambda"), "lambda");
  const Json& variant = field(j, "variant");
  if (!variant.is_string()) throw InputError("variant must be a string");
  const std::string kind = variant.get<std::string>();
  if (kind == "matrix") return dissipative::OperatorSpec::linear(lambda, to_matrix(field(j, "matrix"), "matrix"));
  if (kind == "graph") return dissipative::OperatorSpec::graph(lambda, pairs_from_json(j));
  const std::string prefix = "builtin:";
  if (kind.rfind(prefix, 0) == 0) {
    const double atoms = j.contains("atoms") ? to_number(j.at("atoms"), "atoms") : 1.0;
    if (atoms < 1 || atoms != std::floor(atoms)) throw InputError("atoms must be a positive integer");
    auto op = dissipative::builtin(kind.substr(prefix.size()), static_cast<Eigen::Index>(atoms), to_dim(j));
    if (std::abs(op.lambda() - lambda) > 1e-12)
      throw InputError("builtin '" + kind + "' has lambda " + std::to_string(op.lambda()));
    return op;
  }
  throw InputError("unknown operator variant '" + kind + "'");
}

}  // namespace invmono::io
