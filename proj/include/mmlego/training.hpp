#pragma once

// Task losses, evaluation metrics, and the optimization loop machinery:
// Adam, a reduce-on-plateau schedule, and patience-based early stopping.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmlego/tensor.hpp"

namespace mmlego {

enum class TaskKind { kSurvival, kBinary, kMulticlass };

TaskKind task_kind_from_string(const std::string& s);
std::string to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::kBinary;
  std::size_t n_bins = 4;     // survival
  std::size_t n_classes = 2;  // binary / multiclass
  // Interior bin edges (n_bins - 1 values) fitted on training times; stored
  // with the model so inference bins consistently.
  std::vector<double> bin_edges;

  std::size_t output_dim() const;
  void validate() const;
  bool compatible_with(const TaskSpec& other) const;
};

struct SurvivalLabel {
  std::size_t bin = 0;
  bool censored = false;  // right-censored: event not observed
  double time = 0.0;
};

// ---- survival arithmetic ----

// Interior edges at the k/n_bins quantiles of the uncensored times.
std::vector<double> fit_survival_bins(const std::vector<double>& times,
                                      const std::vector<bool>& censored,
                                      std::size_t n_bins);
std::size_t assign_survival_bin(double time, const std::vector<double>& edges);

struct SurvivalCurve {
  std::vector<double> hazards;   // sigmoid(logit) per bin
  std::vector<double> survival;  // prod_{j<=k} (1 - hazard_j)
};
SurvivalCurve hazards_and_survival(const std::vector<double>& logits);

// Risk score used for ranking: negative sum of the survival curve, so a
// higher score means an earlier expected event.
double survival_risk_score(const std::vector<double>& logits);

// ---- losses (recorded ops with analytic backward rules) ----

// Discrete-hazard negative log likelihood, batch mean. An uncensored sample
// in bin k contributes -[log S(k-1) + log h(k)]; a censored one -log S(k).
Tensor nll_survival_loss(const Tensor& logits,
                         const std::vector<SurvivalLabel>& labels);

Tensor cross_entropy_loss(const Tensor& logits,
                          const std::vector<std::size_t>& labels);

// ---- metrics ----

// Harrell-style concordance over pairs (i,j) with t_i < t_j and i
// uncensored; risk ties earn half credit.
double concordance_index(const std::vector<double>& risks,
                         const std::vector<double>& times,
                         const std::vector<bool>& censored);

// Rank-based (Mann-Whitney) AUC with midrank tie handling.
double auc(const std::vector<double>& scores, const std::vector<bool>& labels);

// Unweighted mean of one-vs-rest AUCs over classes with both positives and
// negatives present. `scores` is (n x n_classes) row-major.
double macro_auc(const std::vector<std::vector<double>>& scores,
                 const std::vector<std::size_t>& labels);

// ---- optimization ----

// Process-wide count of optimizer steps; lets callers assert that an
// operation performed zero training.
std::uint64_t gradient_steps();

struct ParamGroup {
  std::vector<Tensor> params;
  double l1 = 0.0;  // L1 penalty coefficient applied to this group
};

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamGroup> groups, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // L1 penalty value at the current parameters (reported alongside the
  // data loss; the subgradient is folded into step()).
  double l1_penalty() const;

 private:
  std::vector<ParamGroup> groups_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // flattened per param
};

// Halves (by `factor`) the optimizer learning rate after `patience`
// consecutive non-improving observations.
class PlateauScheduler {
 public:
  PlateauScheduler(AdamOptimizer& opt, double factor = 0.5,
                   std::size_t patience = 3);
  void observe(double validation_loss);

 private:
  AdamOptimizer& opt_;
  double factor_;
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::optional<double> best_;
};

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience = 7);
  // Returns true when the observed loss improves on the best so far.
  bool observe(double validation_loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t stale_epochs() const { return stale_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::optional<double> best_;
};

}  // namespace mmlego
