#pragma once

// Survival evaluation: Kaplan-Meier censoring weights, time-dependent
// concordance, censoring-weighted Brier score and its integral, CS-score.
//
// Predictions are discrete curves S_1..S_T over bin edges e_0..e_T; at a
// continuous time t the curve value is S_{kappa(t)}.

#include "imputmae/preprocessing.hpp"

namespace imputmae {

struct EvalInput {
  RowVec survival;
  SurvivalLabel label;
};

/// Right-continuous step function with G(t) = 1 before the first jump.
class KaplanMeier {
 public:
  KaplanMeier() = default;
  KaplanMeier(std::vector<Scalar> times, std::vector<Scalar> values) : times_(std::move(times)), values_(std::move(values)) {}

  /// Value after every jump at times <= t.
  Scalar at(Scalar t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    return it == times_.begin() ? 1.0 : values_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }
  /// Left limit: value after jumps at times strictly before t.
  Scalar left_limit(Scalar t) const {
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    return it == times_.begin() ? 1.0 : values_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }
  const std::vector<Scalar>& jump_times() const { return times_; }
  const std::vector<Scalar>& values() const { return values_; }

 private:
  std::vector<Scalar> times_;
  std::vector<Scalar> values_;
};

/// Product-limit estimate of the censoring survival function: censorings
/// are the "events"; the risk set at s is every subject with time >= s.
inline KaplanMeier km_estimator(const std::vector<SurvivalLabel>& labels) {
  if (labels.empty()) throw Error("km_estimator: no labels");
  std::vector<Scalar> times;
  for (const auto& l : labels) times.push_back(l.time);
  std::sort(times.begin(), times.end());
  std::map<Scalar, std::size_t> censored;
  for (const auto& l : labels)
    if (!l.event) ++censored[l.time];
  std::vector<Scalar> jt, jv;
  Scalar g = 1.0;
  for (const auto& [s, c] : censored) {
    const auto at_risk = static_cast<std::size_t>(times.end() - std::lower_bound(times.begin(), times.end(), s));
    g *= 1.0 - static_cast<Scalar>(c) / static_cast<Scalar>(at_risk);
    jt.push_back(s);
    jv.push_back(g);
  }
  return KaplanMeier(std::move(jt), std::move(jv));
}

inline void check_curves(const std::vector<EvalInput>& in, const std::vector<Scalar>& edges) {
  const auto T = static_cast<Eigen::Index>(edges.size()) - 1;
  for (const auto& e : in)
    if (e.survival.size() != T) throw Error("metrics: survival curve length does not match bin count");
}

struct Concordance {
  Scalar c_index = 0.0;
  std::size_t comparable_pairs = 0;
};

/// Pair (i, j) is comparable when t_i < t_j and i had the event; it is
/// concordant when S_i < S_j at i's event bin, and counts 0.5 on a tie.
inline Concordance concordance_td(const std::vector<EvalInput>& in, const std::vector<Scalar>& edges) {
  check_curves(in, edges);
  Scalar score = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!in[i].label.event) continue;
    const Eigen::Index k = interval_index(edges, in[i].label.time) - 1;
    const Scalar si = in[i].survival(k);
    for (std::size_t j = 0; j < in.size(); ++j) {
      if (!(in[i].label.time < in[j].label.time)) continue;
      ++pairs;
      const Scalar sj = in[j].survival(k);
      score += si < sj ? 1.0 : (si == sj ? 0.5 : 0.0);
    }
  }
  if (pairs == 0) throw Error("concordance_td: no comparable pairs");
  return {score / static_cast<Scalar>(pairs), pairs};
}

struct BrierResult {
  Scalar ibs = 0.0;
  std::vector<Scalar> grid;   // bin midpoints
  std::vector<Scalar> brier;  // BS at each grid point
  std::size_t dropped_terms = 0;
};

/// Graf Brier score at the bin midpoints, integrated with bin-width weights
/// and normalized by the span e_T - e_0. Terms whose censoring weight is
/// zero are dropped and counted.
inline BrierResult integrated_brier(const std::vector<EvalInput>& in, const std::vector<Scalar>& edges, const KaplanMeier& G) {
  check_curves(in, edges);
  if (in.empty()) throw Error("integrated_brier: no patients");
  const std::size_t T = edges.size() - 1;
  const Scalar span = edges.back() - edges.front();
  if (!(span > 0.0)) throw Error("integrated_brier: bin edges span no time");
  BrierResult r;
  const Scalar n = static_cast<Scalar>(in.size());
  for (std::size_t k = 1; k <= T; ++k) {
    const Scalar t = 0.5 * (edges[k - 1] + edges[k]);
    const Scalar gt = G.at(t);
    const auto col = static_cast<Eigen::Index>(interval_index(edges, t) - 1);
    Scalar bs = 0.0;
    for (const auto& e : in) {
      const Scalar s = e.survival(col);
      if (e.label.time <= t && e.label.event) {
        const Scalar w = G.left_limit(e.label.time);
        if (w > 0.0) bs += s * s / w;
        else ++r.dropped_terms;
      } else if (e.label.time > t) {
        if (gt > 0.0) bs += (1.0 - s) * (1.0 - s) / gt;
        else ++r.dropped_terms;
      }
    }
    bs /= n;
    r.grid.push_back(t);
    r.brier.push_back(bs);
    r.ibs += bs * (edges[k] - edges[k - 1]);
  }
  r.ibs /= span;
  return r;
}

inline Scalar cs_score(Scalar c_index, Scalar ibs) {
  if (!(c_index >= 0.0 && c_index <= 1.0)) throw Error("cs_score: c_index outside [0,1]");
  if (!(ibs >= 0.0 && ibs <= 1.0)) throw Error("cs_score: ibs outside [0,1]");
  return (c_index + (1.0 - ibs)) / 2.0;
}

struct SurvivalReport {
  Scalar c_index = 0.0;
  Scalar ibs = 0.0;
  Scalar cs_score = 0.0;
  std::size_t n = 0;
  std::size_t comparable_pairs = 0;
  std::size_t dropped_terms = 0;
};

/// All metrics of one evaluation set; censoring weights come from the set itself.
inline SurvivalReport evaluate_survival(const std::vector<EvalInput>& in, const std::vector<Scalar>& edges) {
  std::vector<SurvivalLabel> labels;
  for (const auto& e : in) labels.push_back(e.label);
  const Concordance c = concordance_td(in, edges);
  const BrierResult b = integrated_brier(in, edges, km_estimator(labels));
  SurvivalReport r;
  r.c_index = c.c_index;
  r.comparable_pairs = c.comparable_pairs;
  r.ibs = b.ibs;
  r.dropped_terms = b.dropped_terms;
  r.cs_score = cs_score(r.c_index, std::min<Scalar>(r.ibs, 1.0));
  r.n = in.size();
  return r;
}

}  // namespace imputmae
