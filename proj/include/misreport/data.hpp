#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "misreport/error.hpp"
#include "misreport/matrix.hpp"
#include "misreport/random.hpp"

namespace misreport {

enum class Role { Manipulated, Unmanipulated };

inline const char* to_string(Role role) {
  return role == Role::Manipulated ? "manipulated" : "unmanipulated";
}

/// Opaque agent token. The reserved trust token stands for the single
/// trustworthy agent that generated the unmanipulated data when the two
/// datasets are fused.
class AgentId {
 public:
  AgentId() = default;
  explicit AgentId(std::string id) : id_(std::move(id)) {}

  const std::string& str() const noexcept { return id_; }
  bool is_trusted() const noexcept { return id_ == kTrustToken; }

  static AgentId trusted() { return AgentId(std::string(kTrustToken)); }

  auto operator<=>(const AgentId&) const = default;

  static constexpr const char* kTrustToken = "__trusted__";

 private:
  std::string id_;
};

/// Immutable columnar table. Covariates are stored as reals (row-major) even
/// when binary so every learner sees one matrix type. Agent ids are interned.
class TabularDataset {
 public:
  TabularDataset(Role role, std::vector<std::string> covariate_names, Matrix covariates,
                 std::vector<std::uint8_t> feature, std::vector<std::uint8_t> outcome,
                 std::optional<std::vector<AgentId>> agent = std::nullopt,
                 std::optional<std::vector<std::uint8_t>> true_feature = std::nullopt)
      : role_(role),
        covariate_names_(std::move(covariate_names)),
        covariates_(std::move(covariates)),
        feature_(std::move(feature)),
        outcome_(std::move(outcome)),
        true_feature_(std::move(true_feature)) {
    const std::size_t n = feature_.size();
    if (n == 0) throw Error(ErrorKind::Size, "dataset must have at least one row");
    if (outcome_.size() != n || covariates_.rows() != n) {
      // An empty covariate block is represented as an n x 0 matrix.
      if (!(covariates_.rows() == 0 && covariate_names_.empty() && outcome_.size() == n)) {
        throw Error(ErrorKind::Shape, "dataset columns have different lengths");
      }
      covariates_ = Matrix(n, 0);
    }
    if (covariates_.cols() != covariate_names_.size()) {
      throw Error(ErrorKind::Shape, "covariate name count does not match covariate columns");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (feature_[i] > 1) throw Error(ErrorKind::Validation, "feature not in {0,1} at row " + std::to_string(i));
      if (outcome_[i] > 1) throw Error(ErrorKind::Validation, "outcome not in {0,1} at row " + std::to_string(i));
    }
    for (double v : covariates_.data()) {
      if (!std::isfinite(v)) throw Error(ErrorKind::Validation, "non-finite covariate value");
    }
    if (agent) {
      if (role_ == Role::Unmanipulated) {
        throw Error(ErrorKind::Role, "unmanipulated dataset cannot carry an agent column");
      }
      if (agent->size() != n) throw Error(ErrorKind::Shape, "agent column length mismatch");
      std::map<AgentId, std::uint32_t> index;
      for (const auto& a : *agent) {
        if (a.is_trusted()) {
          throw Error(ErrorKind::Role, "reserved trust token appears in a manipulated dataset");
        }
        index.emplace(a, 0);
      }
      std::uint32_t next = 0;
      for (auto& [id, code] : index) {
        code = next++;
        agent_levels_.push_back(id);
      }
      agent_codes_.reserve(n);
      for (const auto& a : *agent) agent_codes_.push_back(index.at(a));
      has_agent_ = true;
    }
    if (true_feature_) {
      if (true_feature_->size() != n) throw Error(ErrorKind::Shape, "true_feature length mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        if ((*true_feature_)[i] > 1) {
          throw Error(ErrorKind::Validation, "true_feature not in {0,1} at row " + std::to_string(i));
        }
        if ((*true_feature_)[i] == 1 && feature_[i] != 1) {
          throw Error(ErrorKind::Validation,
                      "true feature 1 reported as 0 at row " + std::to_string(i) +
                          " (agents never under-report)");
        }
      }
    }
  }

  Role role() const noexcept { return role_; }
  std::size_t rows() const noexcept { return feature_.size(); }
  std::size_t covariate_count() const noexcept { return covariates_.cols(); }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  const Matrix& covariates() const noexcept { return covariates_; }
  std::span<const double> covariate_row(std::size_t i) const { return covariates_.row(i); }

  std::uint8_t feature(std::size_t i) const { return feature_[i]; }
  std::uint8_t outcome(std::size_t i) const { return outcome_[i]; }
  const std::vector<std::uint8_t>& features() const noexcept { return feature_; }
  const std::vector<std::uint8_t>& outcomes() const noexcept { return outcome_; }

  bool has_agent() const noexcept { return has_agent_; }
  const AgentId& agent(std::size_t i) const { return agent_levels_[agent_codes_.at(i)]; }

  bool has_true_feature() const noexcept { return true_feature_.has_value(); }
  std::uint8_t true_feature(std::size_t i) const { return true_feature_.value()[i]; }
  const std::optional<std::vector<std::uint8_t>>& true_features() const noexcept { return true_feature_; }

  /// Agents that actually occur in the rows, sorted.
  std::vector<AgentId> agents() const {
    std::vector<bool> present(agent_levels_.size(), false);
    for (auto c : agent_codes_) present[c] = true;
    std::vector<AgentId> out;
    for (std::size_t k = 0; k < agent_levels_.size(); ++k) {
      if (present[k]) out.push_back(agent_levels_[k]);
    }
    return out;
  }

  std::optional<std::size_t> column_index(const std::string& name) const {
    auto it = std::find(covariate_names_.begin(), covariate_names_.end(), name);
    if (it == covariate_names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names_.begin());
  }

  /// Rows at the given indices (repeats allowed, order kept). Returns an
  /// empty optional for an empty selection since datasets have n >= 1.
  std::optional<TabularDataset> take(std::span<const std::size_t> indices) const {
    if (indices.empty()) return std::nullopt;
    return TabularDataset(*this, indices);
  }

  /// Same rows, keeping only the named covariate columns in the given order.
  TabularDataset select_covariates(const std::vector<std::string>& names) const {
    std::vector<std::size_t> cols;
    for (const auto& name : names) {
      auto idx = column_index(name);
      if (!idx) throw Error(ErrorKind::Schema, "missing covariate column '" + name + "'");
      cols.push_back(*idx);
    }
    TabularDataset out = *this;
    Matrix m(rows(), cols.size());
    for (std::size_t i = 0; i < rows(); ++i) {
      for (std::size_t k = 0; k < cols.size(); ++k) m(i, k) = covariates_(i, cols[k]);
    }
    out.covariates_ = std::move(m);
    out.covariate_names_ = names;
    return out;
  }

  /// Copy with every row assigned to a single agent (manipulated role).
  TabularDataset with_single_agent(const AgentId& id) const {
    return TabularDataset(Role::Manipulated, covariate_names_, covariates_, feature_, outcome_,
                          std::vector<AgentId>(rows(), id), true_feature_);
  }

  /// Row-level equality (used by round-trip tests).
  bool same_rows(const TabularDataset& other, double real_tol = 0.0) const {
    if (rows() != other.rows() || covariate_names_ != other.covariate_names_ ||
        role_ != other.role_ || feature_ != other.feature_ || outcome_ != other.outcome_ ||
        true_feature_ != other.true_feature_ || has_agent_ != other.has_agent_) {
      return false;
    }
    for (std::size_t i = 0; i < covariates_.data().size(); ++i) {
      if (std::abs(covariates_.data()[i] - other.covariates_.data()[i]) > real_tol) return false;
    }
    if (has_agent_) {
      for (std::size_t i = 0; i < rows(); ++i) {
        if (agent(i) != other.agent(i)) return false;
      }
    }
    return true;
  }

 private:
  TabularDataset(const TabularDataset& src, std::span<const std::size_t> indices)
      : role_(src.role_),
        covariate_names_(src.covariate_names_),
        covariates_(indices.size(), src.covariate_count()),
        agent_levels_(src.agent_levels_),
        has_agent_(src.has_agent_) {
    const std::size_t d = src.covariate_count();
    feature_.reserve(indices.size());
    outcome_.reserve(indices.size());
    if (src.true_feature_) true_feature_.emplace().reserve(indices.size());
    if (has_agent_) agent_codes_.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      if (i >= src.rows()) throw Error(ErrorKind::Shape, "row index out of range");
      auto from = src.covariate_row(i);
      std::copy(from.begin(), from.end(), covariates_.row(r).begin());
      feature_.push_back(src.feature_[i]);
      outcome_.push_back(src.outcome_[i]);
      if (true_feature_) true_feature_->push_back((*src.true_feature_)[i]);
      if (has_agent_) agent_codes_.push_back(src.agent_codes_[i]);
    }
    (void)d;
  }

  Role role_;
  std::vector<std::string> covariate_names_;
  Matrix covariates_;
  std::vector<std::uint8_t> feature_;
  std::vector<std::uint8_t> outcome_;
  std::optional<std::vector<std::uint8_t>> true_feature_;
  std::vector<AgentId> agent_levels_;
  std::vector<std::uint32_t> agent_codes_;
  bool has_agent_ = false;
};

/// Column-name mapping for CSV ingestion. An empty covariate list means
/// "every column whose name starts with c_".
struct Schema {
  std::string feature = "x";
  std::string outcome = "y";
  std::optional<std::string> agent;
  std::optional<std::string> true_feature;
  std::vector<std::string> covariates;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (ch != '\r') {
      current.push_back(ch);
    }
  }
  fields.push_back(std::move(current));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

inline double parse_real(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty()) {
    throw Error(ErrorKind::Validation,
                "missing value in column '" + column + "' at row " + std::to_string(row));
  }
  std::size_t consumed = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &consumed);
  } catch (const std::exception&) {
    consumed = 0;
  }
  if (consumed != cell.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::Validation, "non-numeric value '" + cell + "' in column '" + column +
                                           "' at row " + std::to_string(row));
  }
  return v;
}

inline std::uint8_t parse_binary(const std::string& cell, std::size_t row, const std::string& column) {
  const double v = parse_real(cell, row, column);
  if (v != 0.0 && v != 1.0) {
    throw Error(ErrorKind::Validation, "value " + cell + " outside {0,1} in column '" + column +
                                           "' at row " + std::to_string(row));
  }
  return static_cast<std::uint8_t>(v);
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a comma-delimited file with a header row. Rows are 0-based in
/// error messages and count data rows only. Covariates outside [-10, 10]
/// are reported through `warnings` (if given) but accepted.
inline TabularDataset load_dataset(const std::string& path, const Schema& schema, Role role,
                                   std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  if (role == Role::Unmanipulated && schema.agent) {
    throw Error(ErrorKind::Role, "agent column mapped for an unmanipulated dataset");
  }
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Size, "'" + path + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = detail::split_csv_line(line);
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header.size(); ++i) pos.emplace(header[i], i);

  auto require = [&](const std::string& name) {
    auto it = pos.find(name);
    if (it == pos.end()) throw Error(ErrorKind::Schema, "missing column '" + name + "' in '" + path + "'");
    return it->second;
  };
  const std::size_t x_col = require(schema.feature);
  const std::size_t y_col = require(schema.outcome);
  std::optional<std::size_t> a_col, xs_col;
  if (schema.agent) a_col = require(*schema.agent);
  if (schema.true_feature) xs_col = require(*schema.true_feature);

  std::vector<std::string> cov_names = schema.covariates;
  if (cov_names.empty()) {
    for (const auto& h : header) {
      if (h.rfind("c_", 0) == 0) cov_names.push_back(h);
    }
  }
  std::vector<std::size_t> cov_cols;
  for (const auto& name : cov_names) cov_cols.push_back(require(name));

  std::vector<double> cov;
  std::vector<std::uint8_t> x, y, xs;
  std::vector<AgentId> agents;
  bool warned = false;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::Validation, "row " + std::to_string(row) + " has " +
                                             std::to_string(fields.size()) + " fields, expected " +
                                             std::to_string(header.size()));
    }
    x.push_back(detail::parse_binary(fields[x_col], row, schema.feature));
    y.push_back(detail::parse_binary(fields[y_col], row, schema.outcome));
    if (xs_col) xs.push_back(detail::parse_binary(fields[*xs_col], row, *schema.true_feature));
    if (a_col) {
      if (fields[*a_col].empty()) {
        throw Error(ErrorKind::Validation, "missing agent id at row " + std::to_string(row));
      }
      agents.emplace_back(fields[*a_col]);
    }
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      const double v = detail::parse_real(fields[cov_cols[k]], row, cov_names[k]);
      if ((v < -10.0 || v > 10.0) && !warned && warnings) {
        warnings->push_back("covariate '" + cov_names[k] + "' has value " + fields[cov_cols[k]] +
                            " outside [-10, 10] at row " + std::to_string(row) +
                            "; covariates are expected to be normalized");
        warned = true;
      }
      cov.push_back(v);
    }
    ++row;
  }
  if (row == 0) throw Error(ErrorKind::Size, "'" + path + "' has no data rows");
  Matrix m(row, cov_names.size(), std::move(cov));
  std::optional<std::vector<AgentId>> agent_col;
  if (a_col) agent_col = std::move(agents);
  std::optional<std::vector<std::uint8_t>> xs_opt;
  if (xs_col) xs_opt = std::move(xs);
  return TabularDataset(role, std::move(cov_names), std::move(m), std::move(x), std::move(y),
                        std::move(agent_col), std::move(xs_opt));
}

/// Writes canonical column names: covariates (as named), x, [x_star], y, [a].
inline void write_dataset(const TabularDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  std::string header;
  for (const auto& name : ds.covariate_names()) header += name + ",";
  header += "x,";
  if (ds.has_true_feature()) header += "x_star,";
  header += "y";
  if (ds.has_agent()) header += ",a";
  out << header << '\n';
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    std::string line;
    for (double v : ds.covariate_row(i)) line += detail::format_real(v) + ",";
    line += std::to_string(ds.feature(i)) + ",";
    if (ds.has_true_feature()) line += std::to_string(ds.true_feature(i)) + ",";
    line += std::to_string(ds.outcome(i));
    if (ds.has_agent()) line += "," + ds.agent(i).str();
    out << line << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write to '" + path + "' failed");
}

struct SplitResult {
  TabularDataset train;
  TabularDataset eval;
};

/// Shuffled row-level partition; |train| = round(train_fraction * n), kept
/// within [1, n-1] so neither part is empty.
inline SplitResult split(const TabularDataset& ds, double train_fraction, std::uint64_t seed) {
  const std::size_t n = ds.rows();
  if (n < 2) throw Error(ErrorKind::Size, "split needs at least 2 rows");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorKind::Parameter, "train_fraction must lie in (0, 1)");
  }
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  Rng rng(seed);
  const auto order = rng.permutation(n);
  std::span<const std::size_t> all(order);
  return {*ds.take(all.subspan(0, n_train)), *ds.take(all.subspan(n_train))};
}

/// Row indices belonging to agent `a`.
inline std::vector<std::size_t> agent_rows(const TabularDataset& ds, const AgentId& a) {
  if (!ds.has_agent()) throw Error(ErrorKind::Role, "dataset has no agent column");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    if (ds.agent(i) == a) idx.push_back(i);
  }
  return idx;
}

/// Rows of agent `a`; an unknown agent yields an empty result, not an error.
inline std::optional<TabularDataset> filter_by_agent(const TabularDataset& ds, const AgentId& a) {
  const auto idx = agent_rows(ds, a);
  return ds.take(idx);
}

/// Row-wise concatenation of datasets with identical covariate layout.
inline TabularDataset concat(const TabularDataset& first, const TabularDataset& second) {
  if (first.covariate_names() != second.covariate_names() || first.role() != second.role() ||
      first.has_agent() != second.has_agent() || first.has_true_feature() != second.has_true_feature()) {
    throw Error(ErrorKind::Schema, "cannot concatenate datasets with different layouts");
  }
  const std::size_t n = first.rows() + second.rows();
  Matrix m(n, first.covariate_count());
  std::vector<std::uint8_t> x, y, xs;
  std::vector<AgentId> agents;
  std::size_t r = 0;
  for (const TabularDataset* ds : {&first, &second}) {
    for (std::size_t i = 0; i < ds->rows(); ++i, ++r) {
      auto row = ds->covariate_row(i);
      std::copy(row.begin(), row.end(), m.row(r).begin());
      x.push_back(ds->feature(i));
      y.push_back(ds->outcome(i));
      if (ds->has_true_feature()) xs.push_back(ds->true_feature(i));
      if (ds->has_agent()) agents.push_back(ds->agent(i));
    }
  }
  std::optional<std::vector<AgentId>> a;
  if (first.has_agent()) a = std::move(agents);
  std::optional<std::vector<std::uint8_t>> t;
  if (first.has_true_feature()) t = std::move(xs);
  return TabularDataset(first.role(), first.covariate_names(), std::move(m), std::move(x),
                        std::move(y), std::move(a), std::move(t));
}

}  // namespace misreport
