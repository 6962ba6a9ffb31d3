#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "misreport/data.hpp"
#include "misreport/error.hpp"
#include "misreport/gbt.hpp"
#include "misreport/logistic.hpp"
#include "misreport/matrix.hpp"

namespace misreport {

enum class LearnerKind { GradientBoostedTrees, LogisticRegression, MeanOnly };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::GradientBoostedTrees;
  GbtParams gbt;
  LogRegParams logreg;
};

struct MeanModel {
  double mean = 0.0;
};

/// Fitted probability model over a fixed column layout.
class OutcomeModel {
 public:
  using Impl = std::variant<MeanModel, GbtModel, LogisticModel>;

  OutcomeModel(Impl impl, std::size_t n_features) : impl_(std::move(impl)), n_features_(n_features) {}

  std::size_t n_features() const noexcept { return n_features_; }
  const Impl& impl() const noexcept { return impl_; }

  double predict(std::span<const double> x) const {
    if (x.size() != n_features_) {
      throw Error(ErrorKind::Shape, "expected " + std::to_string(n_features_) + " features, got " +
                                        std::to_string(x.size()));
    }
    const double p = std::visit(
        [&](const auto& m) -> double {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, MeanModel>) {
            return m.mean;
          } else {
            return m.predict(x);
          }
        },
        impl_);
    return std::clamp(p, 0.0, 1.0);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_features"] = n_features_;
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, MeanModel>) {
            j["kind"] = "mean";
            j["mean"] = m.mean;
          } else if constexpr (std::is_same_v<T, GbtModel>) {
            j["kind"] = "gbt";
            j["model"] = m.to_json();
          } else {
            j["kind"] = "logistic";
            j["weights"] = m.weights;
            j["bias"] = m.bias;
          }
        },
        impl_);
    return j;
  }

 private:
  Impl impl_;
  std::size_t n_features_;
};

inline OutcomeModel fit(const LearnerSpec& spec, const Matrix& features,
                        std::span<const std::uint8_t> labels, std::uint64_t /*seed*/ = 0) {
  if (features.rows() == 0 || labels.empty()) throw Error(ErrorKind::Size, "cannot fit on empty data");
  if (features.rows() != labels.size()) throw Error(ErrorKind::Shape, "feature/label row mismatch");
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Validation, "non-finite feature value");
  }
  switch (spec.kind) {
    case LearnerKind::MeanOnly: {
      double s = 0.0;
      for (auto y : labels) s += y;
      return OutcomeModel(MeanModel{s / static_cast<double>(labels.size())}, features.cols());
    }
    case LearnerKind::LogisticRegression:
      return OutcomeModel(fit_logistic(features, labels, spec.logreg), features.cols());
    case LearnerKind::GradientBoostedTrees:
      return OutcomeModel(fit_gbt(features, labels, spec.gbt), features.cols());
  }
  throw Error(ErrorKind::Parameter, "unknown learner kind");
}

/// Where a CATE model came from: the unmanipulated reference data, or one
/// agent's slice of the manipulated data.
struct Provenance {
  std::optional<AgentId> agent;  // empty = reference

  static Provenance reference() { return {}; }
  static Provenance per_agent(AgentId a) { return {std::move(a)}; }
  bool is_reference() const noexcept { return !agent.has_value(); }
};

/// S-learner: one outcome model over [covariates | feature]; the CATE at c
/// is predict(c, 1) - predict(c, 0).
class CateModel {
 public:
  CateModel(OutcomeModel model, Provenance provenance, std::vector<std::string> covariate_names,
            bool overlap_warning)
      : model_(std::move(model)),
        provenance_(std::move(provenance)),
        covariate_names_(std::move(covariate_names)),
        overlap_warning_(overlap_warning) {}

  const OutcomeModel& outcome_model() const noexcept { return model_; }
  const Provenance& provenance() const noexcept { return provenance_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  std::size_t covariate_dim() const noexcept { return covariate_names_.size(); }
  /// Set when the training data had only one feature value.
  bool overlap_warning() const noexcept { return overlap_warning_; }

  double cate(std::span<const double> c) const {
    if (c.size() != covariate_dim()) {
      throw Error(ErrorKind::Shape, "covariate vector has " + std::to_string(c.size()) +
                                        " entries, model expects " + std::to_string(covariate_dim()));
    }
    std::vector<double> row(c.begin(), c.end());
    row.push_back(1.0);
    const double treated = model_.predict(row);
    row.back() = 0.0;
    return treated - model_.predict(row);
  }

  /// CATE for every row of `ds`; the dataset must carry the same covariate
  /// names in the same order.
  std::vector<double> cate_rows(const TabularDataset& ds) const {
    if (ds.covariate_names() != covariate_names_) {
      throw Error(ErrorKind::Shape, "dataset covariates do not match the CATE model's layout");
    }
    std::vector<double> out(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) out[i] = cate(ds.covariate_row(i));
    return out;
  }

 private:
  OutcomeModel model_;
  Provenance provenance_;
  std::vector<std::string> covariate_names_;
  bool overlap_warning_;
};

inline double cate(const CateModel& model, std::span<const double> c) { return model.cate(c); }

/// Covariates with the feature column appended, the S-learner design.
inline Matrix s_learner_design(const TabularDataset& ds) {
  const std::size_t d = ds.covariate_count();
  Matrix m(ds.rows(), d + 1);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    auto src = ds.covariate_row(i);
    auto dst = m.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[d] = ds.feature(i);
  }
  return m;
}

inline CateModel fit_s_learner(const TabularDataset& train, const LearnerSpec& spec, std::uint64_t seed = 0) {
  Provenance provenance = Provenance::reference();
  if (train.role() == Role::Manipulated) {
    if (train.has_agent()) {
      const auto present = train.agents();
      if (present.size() > 1) {
        throw Error(ErrorKind::Usage,
                    "S-learner on manipulated data must be fitted per agent; got " +
                        std::to_string(present.size()) + " agents");
      }
      provenance = Provenance::per_agent(present.front());
    } else {
      provenance = Provenance::per_agent(AgentId());
    }
  }
  std::size_t ones = 0;
  for (auto x : train.features()) ones += x;
  const bool overlap_warning = ones == 0 || ones == train.rows();
  auto model = fit(spec, s_learner_design(train), train.outcomes(), seed);
  return CateModel(std::move(model), std::move(provenance), train.covariate_names(), overlap_warning);
}

}  // namespace misreport
