#include <doctest.h>

#include <cmath>
#include <random>

#include "mmlego/training.hpp"
#include "oracles.hpp"

using namespace mmlego;

TEST_CASE("hazards and survival from zero logits") {
  const SurvivalCurve curve = hazards_and_survival({0, 0, 0, 0});
  for (double h : curve.hazards) CHECK(h == doctest::Approx(0.5));
  CHECK(curve.survival[0] == doctest::Approx(0.5));
  CHECK(curve.survival[1] == doctest::Approx(0.25));
  CHECK(curve.survival[2] == doctest::Approx(0.125));
  CHECK(curve.survival[3] == doctest::Approx(0.0625));
}

TEST_CASE("saturated negative logits give near-one survival") {
  const SurvivalCurve curve = hazards_and_survival({-50, -50, -50, -50});
  for (double h : curve.hazards) CHECK(h < 1e-20);
  for (double s : curve.survival) CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("survival curve matches a scalar product oracle") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> dist(0.0, 2.0);
  std::vector<double> logits(6);
  for (double& v : logits) v = dist(rng);
  const SurvivalCurve curve = hazards_and_survival(logits);
  double prod = 1.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double h = 1.0 / (1.0 + std::exp(-logits[k]));
    prod *= 1.0 - h;
    CHECK(std::abs(curve.survival[k] - prod) < 1e-12);
    CHECK(curve.hazards[k] > 0.0);
    CHECK(curve.hazards[k] < 1.0);
  }
  // Monotone non-increasing.
  for (std::size_t k = 1; k < logits.size(); ++k) {
    CHECK(curve.survival[k] <= curve.survival[k - 1]);
  }
}

TEST_CASE("survival NLL closed forms") {
  const Tensor logits = Tensor::zeros({1, 4});
  SurvivalLabel uncensored{0, false, 1.0};
  const double lu = nll_survival_loss(logits, {uncensored}).item();
  CHECK(lu == doctest::Approx(std::log(2.0)).epsilon(1e-9));

  SurvivalLabel censored{0, true, 1.0};
  const double lc = nll_survival_loss(logits, {censored}).item();
  CHECK(lc == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("perfect survival prediction drives the loss to zero") {
  // Event in bin 1: hazard ~0 in bin 0 and ~1 in bin 1.
  const Tensor logits = Tensor::from_values({1, 4}, {-50, 50, 0, 0});
  const double loss =
      nll_survival_loss(logits, {SurvivalLabel{1, false, 1.0}}).item();
  CHECK(loss < 1e-15);
}

TEST_CASE("survival NLL rejects out-of-range bins") {
  const Tensor logits = Tensor::zeros({1, 4});
  CHECK_THROWS_AS(nll_survival_loss(logits, {SurvivalLabel{4, false, 1.0}}),
                  InvalidBinError);
}

TEST_CASE("survival NLL gradient check") {
  std::mt19937_64 rng(11);
  Tensor logits = Tensor::randn({5, 4}, rng);
  logits.set_requires_grad(true);
  const std::vector<SurvivalLabel> labels = {
      {0, false, 0.1}, {2, true, 0.9}, {3, false, 2.0}, {1, true, 0.4},
      {3, true, 2.5}};
  {
    GradientTape tape;
    tape.backward(nll_survival_loss(logits, labels));
  }
  CHECK(oracles::max_grad_rel_error(
            [&] { return nll_survival_loss(logits, labels).item(); },
            {logits}) < 1e-4);
}

TEST_CASE("cross entropy closed forms") {
  const Tensor uniform = Tensor::zeros({1, 3});
  CHECK(cross_entropy_loss(uniform, {0}).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-9));

  const Tensor confident = Tensor::from_values({1, 2}, {50.0, 0.0});
  CHECK(cross_entropy_loss(confident, {0}).item() < 1e-20);
}

TEST_CASE("cross entropy matches a scalar oracle and gradchecks") {
  std::mt19937_64 rng(13);
  Tensor logits = Tensor::randn({6, 3}, rng, 2.0);
  const std::vector<std::size_t> labels = {0, 2, 1, 1, 0, 2};
  double expected = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::vector<double> probs = oracles::highprec_softmax(
        {logits.at(i, 0), logits.at(i, 1), logits.at(i, 2)});
    expected += -std::log(probs[labels[i]]);
  }
  expected /= 6.0;
  CHECK(std::abs(cross_entropy_loss(logits, labels).item() - expected) <
        1e-12);

  logits.set_requires_grad(true);
  {
    GradientTape tape;
    tape.backward(cross_entropy_loss(logits, labels));
  }
  CHECK(oracles::max_grad_rel_error(
            [&] { return cross_entropy_loss(logits, labels).item(); },
            {logits}) < 1e-5);
}

TEST_CASE("c-index on perfectly ordered risks") {
  const std::vector<double> risks = {4, 3, 2, 1};
  const std::vector<double> times = {1, 2, 3, 4};
  const std::vector<bool> censored = {false, false, false, false};
  CHECK(concordance_index(risks, times, censored) == 1.0);
}

TEST_CASE("c-index with all-equal risks is one half") {
  const std::vector<double> risks = {1, 1, 1, 1};
  const std::vector<double> times = {1, 2, 3, 4};
  const std::vector<bool> censored = {false, false, false, false};
  CHECK(concordance_index(risks, times, censored) == 0.5);
}

TEST_CASE("c-index raises without comparable pairs") {
  CHECK_THROWS_AS(concordance_index({1, 2}, {1, 2}, {true, true}),
                  NoComparablePairsError);
}

TEST_CASE("c-index equals brute-force enumeration on random data") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> nd(2, 12);
  std::uniform_int_distribution<int> level(0, 4);
  std::bernoulli_distribution cens(0.3);
  std::size_t checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = nd(rng);
    std::vector<double> risks(n), times(n);
    std::vector<bool> censored(n);
    for (int i = 0; i < n; ++i) {
      risks[i] = level(rng);  // integer levels force ties
      times[i] = level(rng);
      censored[i] = cens(rng);
    }
    try {
      const double got = concordance_index(risks, times, censored);
      const double want = oracles::pair_count_cindex(risks, times, censored);
      CHECK(got == want);
      ++checked;
    } catch (const NoComparablePairsError&) {
      // fine: fully censored or fully tied draws have no comparable pairs
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("AUC endpoints") {
  CHECK(auc({0.9, 0.8, 0.2, 0.1}, {true, true, false, false}) == 1.0);
  CHECK(auc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}) == 0.5);
  CHECK_THROWS_AS(auc({1.0, 2.0}, {true, true}), SingleClassError);
}

TEST_CASE("AUC equals brute-force pair counting on random data") {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<int> nd(2, 12);
  std::uniform_int_distribution<int> level(0, 3);
  std::bernoulli_distribution pos(0.5);
  std::size_t checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = nd(rng);
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = level(rng);
      labels[i] = pos(rng);
      (labels[i] ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) continue;
    CHECK(auc(scores, labels) == oracles::pair_count_auc(scores, labels));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("rank metrics are invariant under monotone transforms") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> scores(30), times(30);
  std::vector<bool> labels(30), censored(30);
  std::bernoulli_distribution pos(0.5), cens(0.25);
  for (std::size_t i = 0; i < 30; ++i) {
    scores[i] = dist(rng);
    times[i] = std::abs(dist(rng)) + 0.1;
    labels[i] = pos(rng);
    censored[i] = cens(rng);
  }
  auto affine = [](double x) { return 3.0 * x + 7.0; };
  auto expo = [](double x) { return std::exp(x); };
  std::vector<double> s_affine(30), s_exp(30);
  for (std::size_t i = 0; i < 30; ++i) {
    s_affine[i] = affine(scores[i]);
    s_exp[i] = expo(scores[i]);
  }
  CHECK(auc(scores, labels) == doctest::Approx(auc(s_affine, labels)));
  CHECK(auc(scores, labels) == doctest::Approx(auc(s_exp, labels)));
  CHECK(concordance_index(scores, times, censored) ==
        doctest::Approx(concordance_index(s_exp, times, censored)));
}

TEST_CASE("macro AUC averages one-vs-rest") {
  // Class 2 absent: macro averages the two scoreable classes.
  const std::vector<std::vector<double>> scores = {
      {0.8, 0.1, 0.1}, {0.7, 0.2, 0.1}, {0.2, 0.7, 0.1}, {0.1, 0.8, 0.1}};
  const std::vector<std::size_t> labels = {0, 0, 1, 1};
  CHECK(macro_auc(scores, labels) == 1.0);
  CHECK_THROWS_AS(macro_auc(scores, {0, 0, 0, 0}), SingleClassError);
}

TEST_CASE("survival binning uses quantiles of uncensored times") {
  std::vector<double> times;
  std::vector<bool> censored;
  for (int i = 1; i <= 100; ++i) {
    times.push_back(static_cast<double>(i));
    censored.push_back(false);
  }
  // Censored outliers must not move the edges.
  times.push_back(1e6);
  censored.push_back(true);
  const std::vector<double> edges = fit_survival_bins(times, censored, 4);
  REQUIRE(edges.size() == 3);
  CHECK(edges[0] == doctest::Approx(25.75));
  CHECK(edges[1] == doctest::Approx(50.5));
  CHECK(edges[2] == doctest::Approx(75.25));
  CHECK(assign_survival_bin(10.0, edges) == 0);
  CHECK(assign_survival_bin(26.0, edges) == 1);
  CHECK(assign_survival_bin(60.0, edges) == 2);
  CHECK(assign_survival_bin(1e9, edges) == 3);
}

TEST_CASE("Adam converges on a quadratic bowl") {
  Tensor w = Tensor::from_values({4}, {1.0, -2.0, 0.5, 3.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({ParamGroup{{w}, 0.0}}, 0.1);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    GradientTape tape;
    const Tensor l = sum(mul(w, w));
    losses.push_back(l.item());
    tape.backward(l);
    opt.step();
    opt.zero_grad();
  }
  // Monotone descent into the basin; once the iterate is inside, Adam's
  // near-constant step size makes it hover instead of decreasing strictly.
  for (int step = 1; step < 30; ++step) {
    CHECK(losses[step] < losses[step - 1]);
  }
  CHECK(losses.back() < 1e-2);
  CHECK(losses.back() < losses.front() * 1e-3);
}

TEST_CASE("Adam bias-corrected first step is about lr times sign") {
  Tensor w = Tensor::from_values({1}, {1.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({ParamGroup{{w}, 0.0}}, 0.003);
  {
    GradientTape tape;
    tape.backward(sum(w));  // grad = 1
  }
  opt.step();
  CHECK(w.values()[0] == doctest::Approx(0.997).epsilon(1e-6));
}

TEST_CASE("optimizer step counter is global instrumentation") {
  Tensor w = Tensor::from_values({1}, {1.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({ParamGroup{{w}, 0.0}}, 0.01);
  const std::uint64_t before = gradient_steps();
  opt.step();
  opt.step();
  CHECK(gradient_steps() == before + 2);
}

TEST_CASE("L1 group pulls weights toward zero and reports the penalty") {
  Tensor w = Tensor::from_values({2}, {0.5, -0.5});
  w.set_requires_grad(true);
  AdamOptimizer opt({ParamGroup{{w}, 0.1}}, 0.01);
  CHECK(opt.l1_penalty() == doctest::Approx(0.1));
  for (int i = 0; i < 50; ++i) opt.step();  // no data gradient, only L1
  CHECK(std::abs(w.values()[0]) < 0.5);
  CHECK(std::abs(w.values()[1]) < 0.5);
}

TEST_CASE("early stopping fires after patience non-improving epochs") {
  EarlyStopper stopper(7);
  std::size_t fired_at = 0;
  for (std::size_t epoch = 1; epoch <= 10; ++epoch) {
    stopper.observe(1.0);  // constant validation loss
    if (stopper.should_stop()) {
      fired_at = epoch;
      break;
    }
  }
  CHECK(fired_at == 8);
}

TEST_CASE("plateau scheduler halves the lr after stale epochs") {
  Tensor w = Tensor::from_values({1}, {1.0});
  w.set_requires_grad(true);
  AdamOptimizer opt({ParamGroup{{w}, 0.0}}, 0.1);
  PlateauScheduler sched(opt, 0.5, 3);
  sched.observe(1.0);
  sched.observe(1.0);
  sched.observe(1.0);
  CHECK(opt.lr() == doctest::Approx(0.1));
  sched.observe(1.0);  // third stale epoch in a row after the best
  CHECK(opt.lr() == doctest::Approx(0.05));
  sched.observe(0.5);  // improvement resets
  sched.observe(0.6);
  CHECK(opt.lr() == doctest::Approx(0.05));
}

TEST_CASE("task spec validation") {
  TaskSpec bad_survival{TaskKind::kSurvival, 1, 2, {}};
  CHECK_THROWS_AS(bad_survival.validate(), ConfigError);
  TaskSpec bad_multi{TaskKind::kMulticlass, 4, 1, {}};
  CHECK_THROWS_AS(bad_multi.validate(), ConfigError);
  TaskSpec survival{TaskKind::kSurvival, 4, 2, {}};
  CHECK(survival.output_dim() == 4);
}
