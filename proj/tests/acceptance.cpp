// Acceptance gate: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cforest/causal.hpp"
#include "cforest/forest.hpp"
#include "cforest/inference.hpp"
#include "cforest/stats.hpp"

using namespace cforest;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// The default pipeline (forest nuisances, pilot selection, tuning with
// 200-tree pilots, final forest) with fewer trees per forest.
PipelineOptions mc_options(std::uint64_t seed, int trees) {
  PipelineOptions o;
  o.nuisance_params.num_trees = trees;
  o.nuisance_params.seed = seed;
  o.causal_params.num_trees = trees;
  o.causal_params.seed = seed;
  return o;
}

struct AteRun {
  AteResult ate;
  PipelineResult pipe;
};

AteRun run_ate(const Dataset& d, const PipelineOptions& o) {
  AteRun r;
  r.pipe = run_pipeline(d, o);
  const Dataset used = o.cluster ? d : d.without_clusters();
  const Eigen::VectorXd scores = doubly_robust_scores(used, r.pipe.nuisances, r.pipe.cate);
  r.ate = ate_cluster_robust(scores, build_cluster_index(used));
  return r;
}

// Ensemble mean of per-tree leaf means, walking the trees directly.
double leaf_mean_prediction(const Forest& f, const Eigen::VectorXd& y, const Eigen::VectorXd& x) {
  double sum = 0.0;
  int used = 0;
  for (const Tree& t : f.trees) {
    const TreeNode& leaf = t.nodes[t.leaf_of(x)];
    if (leaf.samples.empty()) continue;
    double s = 0.0;
    for (int i : leaf.samples) s += y[i];
    sum += s / static_cast<double>(leaf.samples.size());
    ++used;
  }
  return sum / used;
}

Outcome criterion1() {
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::mt19937_64 rng(1000 + rep);
    std::normal_distribution<double> normal;
    const Index n = 300, p = 5;
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    std::vector<std::string> labels(n);
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
      y[i] = x(i, 0) + std::sin(3.0 * x(i, 1)) + 0.5 * normal(rng);
      labels[i] = std::to_string(i % 30);
    }
    const Dataset d(x, y, Eigen::VectorXd::Zero(n), labels);
    ForestParams params;
    params.num_trees = 50;
    params.seed = rep;
    params.min_node_size = 3;
    const Forest f = fit_regression_forest(d, y, params);
    Eigen::MatrixXd query(n + 50, p);
    query.topRows(n) = x;
    for (Index i = n; i < query.rows(); ++i)
      for (Index j = 0; j < p; ++j) query(i, j) = 2.0 * normal(rng);
    for (Index q = 0; q < query.rows(); ++q) {
      const Eigen::VectorXd xq = query.row(q).transpose();
      const KernelWeights k = kernel_weights(f, xq);
      double kernel = 0.0;
      for (const auto& [i, a] : k.weights) kernel += a * y[i];
      worst = std::max(worst, std::abs(kernel - leaf_mean_prediction(f, y, xq)));
    }
  }
  return {worst <= 1e-10, fmt("max |leaf-mean - kernel| = %.3g over 20 forests (tol 1e-10)", worst)};
}

Outcome criterion2() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.02, 0.98);
  const Index n = 100000;
  Eigen::VectorXd y(n), w(n), m(n), e(n), tau(n);
  for (Index i = 0; i < n; ++i) {
    y[i] = 3.0 * normal(rng);
    w[i] = unif(rng) < 0.5 ? 0.0 : 1.0;
    m[i] = normal(rng);
    e[i] = unif(rng);
    tau[i] = normal(rng);
  }
  const Eigen::VectorXd gamma = doubly_robust_scores(y, w, m, e, tau);
  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double dr = tau[i] + w[i] / e[i] * (y[i] - m[i] - (1.0 - e[i]) * tau[i]) -
                      (1.0 - w[i]) / (1.0 - e[i]) * (y[i] - m[i] + e[i] * tau[i]);
    worst = std::max(worst, std::abs(dr - gamma[i]));
  }
  return {worst <= 1e-10, fmt("max |compact - expanded| = %.3g over 1e5 tuples (tol 1e-10)", worst)};
}

Outcome criterion3() {
  SchoolEffectSpec spec;
  spec.tau_base = 0.25;
  spec.propensity = 0.5;
  int covered = 0;
  double bias_sum = 0.0, abs_err_sum = 0.0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    const SimulatedData sim = simulate_school_data(40, 100, spec, 3000 + s);
    const AteRun r = run_ate(sim.data, mc_options(s, 200));
    covered += r.ate.ci_lower() <= 0.25 && 0.25 <= r.ate.ci_upper();
    bias_sum += r.ate.estimate - 0.25;
    abs_err_sum += std::abs(r.ate.estimate - 0.25);
  }
  const double mean_abs = abs_err_sum / seeds;
  const bool pass = covered >= 88 && covered <= 99 && mean_abs < 0.03;
  return {pass, fmt("coverage %d/100 (need 88..99); mean |bias| %.4f (need < 0.03); mean bias %.4f", covered, mean_abs,
                    bias_sum / seeds)};
}

Outcome criterion4() {
  int covered = 0;
  double orth_sum = 0.0, triv_sum = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const SimulatedData sim = simulate_confounded(1000, 10, 4000 + s);
    PipelineOptions o = mc_options(s, 500);
    const AteRun orth = run_ate(sim.data, o);
    o.trivial_propensity = true;
    const AteRun triv = run_ate(sim.data, o);
    covered += orth.ate.ci_lower() <= 0.0 && 0.0 <= orth.ate.ci_upper();
    orth_sum += orth.ate.estimate;
    triv_sum += triv.ate.estimate;
  }
  const double orth = orth_sum / seeds, triv = triv_sum / seeds;
  const bool pass = covered >= 17 && triv > 0.0 && triv >= 2.0 * std::abs(orth);
  return {pass, fmt("orthogonalized CI covers 0 in %d/20 (need >= 17); mean orthogonalized %.4f, trivial %.4f "
                    "(need trivial > 0 and >= 2|orth|)",
                    covered, orth, triv)};
}

SchoolEffectSpec clustering_spec() {
  SchoolEffectSpec spec;
  spec.gamma_sd = 0.2;
  spec.tau_step = 0.0;
  return spec;
}

Outcome criterion5() {
  int ratio_ok = 0, insignificant = 0;
  std::vector<double> ratios;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const SimulatedData sim = simulate_school_data(40, 100, clustering_spec(), 5000 + s);
    PipelineOptions o = mc_options(s, 300);
    const PipelineResult clustered = run_pipeline(sim.data, o);
    o.cluster = false;
    const PipelineResult plain = run_pipeline(sim.data, o);
    const double ratio = variance_ratio(plain.cate.tau, clustered.cate.tau);
    ratios.push_back(ratio);
    ratio_ok += ratio > 2.0;
    ForestParams params = o.causal_params;
    const CrossfitResult cf = crossfit_cluster_evaluation(sim.data, clustered.nuisances, 5, params);
    insignificant += cf.calibration.degenerate || cf.calibration.diff_p >= 0.05;
  }
  const Eigen::Map<const Eigen::VectorXd> rv(ratios.data(), static_cast<Index>(ratios.size()));
  const bool pass = ratio_ok >= 15 && insignificant >= 17;
  return {pass, fmt("variance ratio > 2 in %d/20 (need >= 15, median %.2f); crossfit differential insignificant in "
                    "%d/20 (need >= 17)",
                    ratio_ok, median(rv), insignificant)};
}

Outcome criterion6() {
  std::vector<double> mean_coefs;
  int significant = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    SchoolEffectSpec het;
    het.tau_base = 0.0;
    het.tau_step = 0.5;
    het.tau_feature = 0;
    het.tau_threshold = 0.0;
    const SimulatedData sim = simulate_school_data(40, 100, het, 6000 + s);
    const PipelineResult r = run_pipeline(sim.data, mc_options(s, 300));
    const ClusterIndex idx = build_cluster_index(sim.data);
    mean_coefs.push_back(test_calibration(sim.data, r.nuisances, r.cate, idx).mean_coef);

    SchoolEffectSpec null_spec;
    null_spec.tau_base = 0.25;
    null_spec.gamma_sd = 0.0;
    const SimulatedData null_sim = simulate_school_data(40, 100, null_spec, 6500 + s);
    const PipelineResult nr = run_pipeline(null_sim.data, mc_options(s, 300));
    const CalibrationResult c = test_calibration(null_sim.data, nr.nuisances, nr.cate, build_cluster_index(null_sim.data));
    significant += !c.degenerate && c.diff_p < 0.05;
  }
  const Eigen::Map<const Eigen::VectorXd> mc(mean_coefs.data(), static_cast<Index>(mean_coefs.size()));
  const double med = median(mc);
  const bool pass = med >= 0.8 && med <= 1.2 && significant <= 3;
  return {pass, fmt("median mean_coef %.4f (need 0.8..1.2); null differential significant in %d/20 (need <= 3)", med,
                    significant)};
}

Outcome criterion7() {
  bool ok = true;
  std::string detail;
  Eigen::Vector3d a(1, 2, 3), b(2, 4, 6);
  const TTestResult t = welch_t_test(a, b);
  const bool welch_ok = std::abs(t.t + 1.5492) <= 1e-3 && std::abs(t.df - 2.9412) <= 1e-3;
  ok = ok && welch_ok;
  detail += fmt("welch t %.5f df %.5f; ", t.t, t.df);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  Eigen::VectorXd values(25);
  std::vector<int> groups(25);
  for (int i = 0; i < 25; ++i) {
    groups[i] = i < 12 ? 0 : 1;
    values[i] = normal(rng) + (groups[i] ? 0.7 : 0.0);
  }
  const AnovaResult an = one_way_anova(values, groups);
  const Eigen::VectorXd g0 = values.head(12), g1 = values.tail(13);
  const double pooled = ((g0.array() - g0.mean()).square().sum() + (g1.array() - g1.mean()).square().sum()) / 23.0;
  const double tp = (g0.mean() - g1.mean()) / std::sqrt(pooled * (1.0 / 12 + 1.0 / 13));
  const double anova_gap = std::abs(an.f - tp * tp);
  ok = ok && anova_gap <= 1e-10;
  detail += fmt("|F - t^2| %.3g; ", anova_gap);

  Eigen::MatrixXd x(30, 2);
  Eigen::VectorXd y(30);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = normal(rng);
    x(i, 1) = normal(rng);
    y[i] = 1.0 + 0.5 * x(i, 0) - x(i, 1) + (1.0 + std::abs(x(i, 0))) * normal(rng);
  }
  const RegressionResult r = ols_hc(y, x);
  Eigen::MatrixXd design(30, 3);
  design << Eigen::VectorXd::Ones(30), x;
  const Eigen::MatrixXd xtx_inv = (design.transpose() * design).inverse();
  const Eigen::VectorXd beta = xtx_inv * design.transpose() * y;
  const Eigen::VectorXd e = y - design * beta;
  const Eigen::MatrixXd hat = design * xtx_inv * design.transpose();
  Eigen::VectorXd omega(30);
  for (int i = 0; i < 30; ++i) omega[i] = e[i] * e[i] / std::pow(1.0 - hat(i, i), 2);
  const Eigen::MatrixXd v = xtx_inv * design.transpose() * omega.asDiagonal() * design * xtx_inv;
  double ols_gap = 0.0;
  for (int k = 0; k < 3; ++k) {
    ols_gap = std::max(ols_gap, std::abs(r.coefficients[k].estimate - beta[k]));
    ols_gap = std::max(ols_gap, std::abs(r.coefficients[k].std_err - std::sqrt(v(k, k))));
  }
  ok = ok && ols_gap <= 1e-10;
  detail += fmt("OLS vs explicit sandwich %.3g", ols_gap);
  return {ok, detail};
}

Outcome criterion8() {
  SchoolEffectSpec spec;
  spec.num_student_covariates = 20;
  spec.num_school_covariates = 8;
  spec.tau_step = 0.3;
  spec.tau_feature = 20;
  // School sizes are random, so scan seeds for a draw whose first 10391 rows span all 76 schools.
  std::vector<int> keep(10391);
  std::iota(keep.begin(), keep.end(), 0);
  std::optional<Dataset> data;
  std::uint64_t seed = 8000;
  for (; seed < 9000 && !data; ++seed) {
    const SimulatedData sim = simulate_school_data(76, 137, spec, seed);
    if (sim.data.n() < 10391) continue;
    Dataset rows = sim.data.rows(keep);
    if (rows.num_clusters() == 76) data = std::move(rows);
  }
  if (!data) return {false, "no simulated draw gives n = 10391 with J = 76"};
  const Dataset& d = *data;

  PipelineOptions o;
  o.nuisance_params.num_trees = 2000;
  o.causal_params.num_trees = 2000;
  o.nuisance_params.seed = o.causal_params.seed = 2024;
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineResult first = run_pipeline(d, o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.nuisance_params.num_threads = o.causal_params.num_threads = 3;
  const PipelineResult second = run_pipeline(d, o);

  const auto bits_equal = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    return u.size() == v.size() && std::memcmp(u.data(), v.data(), sizeof(double) * u.size()) == 0;
  };
  const bool same = bits_equal(first.cate.tau, second.cate.tau) && bits_equal(first.nuisances.y_hat, second.nuisances.y_hat) &&
                    bits_equal(first.nuisances.w_hat, second.nuisances.w_hat) &&
                    first.selected_features == second.selected_features;
  return {secs < 300.0 && same,
          fmt("n=%ld p=%ld J=%ld B=2000: %.1f s (need < 300); rerun with 3 threads bit-identical: %s", (long)d.n(),
              (long)d.p(), (long)d.num_clusters(), secs, same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria = {
      {"kernel equivalence", criterion1, 10},     {"doubly robust score identity", criterion2, 1},
      {"ATE recovery", criterion3, 600},          {"orthogonalization ablation", criterion4, 300},
      {"clustering ablation", criterion5, 600},   {"calibration sanity", criterion6, 600},
      {"classical test oracles", criterion7, 1},  {"scale and reproducibility", criterion8, 600},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > criteria[k].budget_seconds) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", criteria[k].budget_seconds);
    }
    std::printf("[%s] criterion %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[k].name,
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
