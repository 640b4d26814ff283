#include "mmlego/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace mmlego {

namespace {

std::atomic<std::uint64_t> g_gradient_steps{0};

double softplus(double x) {
  // log(1 + e^x) without overflow
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "survival") return TaskKind::kSurvival;
  if (s == "binary") return TaskKind::kBinary;
  if (s == "multiclass") return TaskKind::kMulticlass;
  throw ConfigError("unknown task kind '" + s + "'");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kSurvival: return "survival";
    case TaskKind::kBinary: return "binary";
    case TaskKind::kMulticlass: return "multiclass";
  }
  return "?";
}

std::size_t TaskSpec::output_dim() const {
  return kind == TaskKind::kSurvival ? n_bins : n_classes;
}

void TaskSpec::validate() const {
  if (kind == TaskKind::kSurvival && n_bins < 2) {
    throw ConfigError("survival tasks need at least 2 bins");
  }
  if (kind == TaskKind::kMulticlass && n_classes < 2) {
    throw ConfigError("multiclass tasks need at least 2 classes");
  }
  if (kind == TaskKind::kBinary && n_classes != 2) {
    throw ConfigError("binary tasks have exactly 2 classes");
  }
}

bool TaskSpec::compatible_with(const TaskSpec& other) const {
  return kind == other.kind && output_dim() == other.output_dim();
}

std::vector<double> fit_survival_bins(const std::vector<double>& times,
                                      const std::vector<bool>& censored,
                                      std::size_t n_bins) {
  if (times.size() != censored.size()) {
    throw LengthMismatchError("fit_survival_bins: times/censored disagree");
  }
  std::vector<double> events;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!censored[i]) events.push_back(times[i]);
  }
  if (events.size() < n_bins) {
    throw TooFewSamplesError("fit_survival_bins: need at least " +
                             std::to_string(n_bins) + " uncensored samples");
  }
  std::sort(events.begin(), events.end());
  std::vector<double> edges;
  for (std::size_t k = 1; k < n_bins; ++k) {
    const double p = static_cast<double>(k) / static_cast<double>(n_bins);
    const double pos = p * static_cast<double>(events.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double q = lo + 1 < events.size()
                         ? events[lo] * (1.0 - frac) + events[lo + 1] * frac
                         : events[lo];
    edges.push_back(q);
  }
  return edges;
}

std::size_t assign_survival_bin(double time,
                                const std::vector<double>& edges) {
  // A time equal to an interior edge falls into the right bin.
  return static_cast<std::size_t>(
      std::upper_bound(edges.begin(), edges.end(), time) - edges.begin());
}

SurvivalCurve hazards_and_survival(const std::vector<double>& logits) {
  SurvivalCurve curve;
  curve.hazards.reserve(logits.size());
  curve.survival.reserve(logits.size());
  double surv = 1.0;
  for (double y : logits) {
    const double h = sigmoid(y);
    curve.hazards.push_back(h);
    surv *= 1.0 - h;
    curve.survival.push_back(surv);
  }
  return curve;
}

double survival_risk_score(const std::vector<double>& logits) {
  const SurvivalCurve curve = hazards_and_survival(logits);
  double acc = 0.0;
  for (double s : curve.survival) acc += s;
  return -acc;
}

Tensor nll_survival_loss(const Tensor& logits,
                         const std::vector<SurvivalLabel>& labels) {
  if (logits.rank() != 2) {
    throw ShapeMismatchError(
        "nll_survival_loss: logits must be (batch x bins)");
  }
  const std::size_t batch = logits.shape()[0];
  const std::size_t bins = logits.shape()[1];
  if (labels.size() != batch) {
    throw LengthMismatchError("nll_survival_loss: batch/labels disagree");
  }
  for (const SurvivalLabel& lbl : labels) {
    if (lbl.bin >= bins) {
      throw InvalidBinError("nll_survival_loss: bin " +
                            std::to_string(lbl.bin) + " out of range");
    }
  }
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = lv.data() + i * bins;
    const std::size_t k = labels[i].bin;
    double loss = 0.0;
    // -log S(k-1) for events, -log S(k) when censored; log(1-h_j) is
    // -softplus(y_j) and log h_k is -softplus(-y_k).
    const std::size_t upto = labels[i].censored ? k + 1 : k;
    for (std::size_t j = 0; j < upto; ++j) loss += softplus(row[j]);
    if (!labels[i].censored) loss += softplus(-row[k]);
    total += loss;
  }
  const double mean_loss = total / static_cast<double>(batch);
  if (!std::isfinite(mean_loss)) {
    throw NumericError("nll_survival_loss: non-finite loss");
  }
  Tensor out = Tensor::scalar(mean_loss);
  GradientTape* tape = GradientTape::active();
  if (tape != nullptr && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto ln = logits.node();
    auto on = out.node();
    tape->record({logits}, {out}, [ln, on, labels, batch, bins]() {
      if (on->grad.empty() || !ln->requires_grad) return;
      ln->materialize_grad();
      const double g = on->grad[0] / static_cast<double>(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        const double* row = ln->values.data() + i * bins;
        double* grow = ln->grad.data() + i * bins;
        const std::size_t k = labels[i].bin;
        const std::size_t upto = labels[i].censored ? k + 1 : k;
        for (std::size_t j = 0; j < upto; ++j) grow[j] += g * sigmoid(row[j]);
        if (!labels[i].censored) grow[k] += g * (sigmoid(row[k]) - 1.0);
      }
    });
  }
  return out;
}

Tensor cross_entropy_loss(const Tensor& logits,
                          const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2) {
    throw ShapeMismatchError(
        "cross_entropy_loss: logits must be (batch x classes)");
  }
  const std::size_t batch = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw LengthMismatchError("cross_entropy_loss: batch/labels disagree");
  }
  for (std::size_t lbl : labels) {
    if (lbl >= classes) {
      throw ConfigError("cross_entropy_loss: label out of range");
    }
  }
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = lv.data() + i * classes;
    double mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) denom += std::exp(row[j] - mx);
    total += mx + std::log(denom) - row[labels[i]];
  }
  const double mean_loss = total / static_cast<double>(batch);
  if (!std::isfinite(mean_loss)) {
    throw NumericError("cross_entropy_loss: non-finite loss");
  }
  Tensor out = Tensor::scalar(mean_loss);
  GradientTape* tape = GradientTape::active();
  if (tape != nullptr && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto ln = logits.node();
    auto on = out.node();
    tape->record({logits}, {out}, [ln, on, labels, batch, classes]() {
      if (on->grad.empty() || !ln->requires_grad) return;
      ln->materialize_grad();
      const double g = on->grad[0] / static_cast<double>(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        const double* row = ln->values.data() + i * classes;
        double* grow = ln->grad.data() + i * classes;
        double mx = row[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j)
          denom += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < classes; ++j) {
          const double p = std::exp(row[j] - mx) / denom;
          grow[j] += g * (p - (labels[i] == j ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

double concordance_index(const std::vector<double>& risks,
                         const std::vector<double>& times,
                         const std::vector<bool>& censored) {
  const std::size_t n = risks.size();
  if (times.size() != n || censored.size() != n) {
    throw LengthMismatchError("concordance_index: input lengths disagree");
  }
  double comparable = 0.0, credit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (censored[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || !(times[i] < times[j])) continue;
      comparable += 1.0;
      if (risks[i] > risks[j]) {
        credit += 1.0;
      } else if (risks[i] == risks[j]) {
        credit += 0.5;
      }
    }
  }
  if (comparable == 0.0) {
    throw NoComparablePairsError("concordance_index: no comparable pairs");
  }
  return credit / comparable;
}

double auc(const std::vector<double>& scores,
           const std::vector<bool>& labels) {
  const std::size_t n = scores.size();
  if (labels.size() != n) {
    throw LengthMismatchError("auc: scores/labels disagree");
  }
  std::size_t n_pos = 0;
  for (bool b : labels) n_pos += b ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw SingleClassError("auc: needs both classes present");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Midranks across tied scores, summed over the positive class.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_auc(const std::vector<std::vector<double>>& scores,
                 const std::vector<std::size_t>& labels) {
  if (scores.size() != labels.size()) {
    throw LengthMismatchError("macro_auc: scores/labels disagree");
  }
  if (scores.empty()) throw EmptyInputError("macro_auc: empty input");
  const std::size_t n_classes = scores[0].size();
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<double> s(scores.size());
    std::vector<bool> y(scores.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i][c];
      y[i] = labels[i] == c;
      pos += y[i] ? 1 : 0;
    }
    if (pos == 0 || pos == scores.size()) continue;  // not scoreable
    total += auc(s, y);
    ++counted;
  }
  if (counted == 0) {
    throw SingleClassError("macro_auc: no class with both outcomes present");
  }
  return total / static_cast<double>(counted);
}

std::uint64_t gradient_steps() {
  return g_gradient_steps.load(std::memory_order_relaxed);
}

AdamOptimizer::AdamOptimizer(std::vector<ParamGroup> groups, double lr,
                             double beta1, double beta2, double eps)
    : groups_(std::move(groups)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const ParamGroup& g : groups_) {
    for (const Tensor& p : g.params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
}

void AdamOptimizer::step() {
  ++t_;
  g_gradient_steps.fetch_add(1, std::memory_order_relaxed);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t slot = 0;
  for (ParamGroup& group : groups_) {
    for (Tensor& p : group.params) {
      auto w = p.mutable_values();
      std::vector<double>& m = m_[slot];
      std::vector<double>& v = v_[slot];
      ++slot;
      const bool has_grad = p.has_grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double g = has_grad ? p.grad()[i] : 0.0;
        if (group.l1 != 0.0 && w[i] != 0.0) {
          g += group.l1 * (w[i] > 0.0 ? 1.0 : -1.0);
        }
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (ParamGroup& group : groups_) {
    for (Tensor& p : group.params) p.zero_grad();
  }
}

double AdamOptimizer::l1_penalty() const {
  double total = 0.0;
  for (const ParamGroup& group : groups_) {
    if (group.l1 == 0.0) continue;
    for (const Tensor& p : group.params) {
      for (double w : p.values()) total += group.l1 * std::abs(w);
    }
  }
  return total;
}

PlateauScheduler::PlateauScheduler(AdamOptimizer& opt, double factor,
                                   std::size_t patience)
    : opt_(opt), factor_(factor), patience_(patience) {}

void PlateauScheduler::observe(double validation_loss) {
  if (!best_.has_value() || validation_loss < *best_) {
    best_ = validation_loss;
    stale_ = 0;
    return;
  }
  if (++stale_ >= patience_) {
    opt_.set_lr(opt_.lr() * factor_);
    stale_ = 0;
  }
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {}

bool EarlyStopper::observe(double validation_loss) {
  if (!best_.has_value() || validation_loss < *best_) {
    best_ = validation_loss;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

}  // namespace mmlego
