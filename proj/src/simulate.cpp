#include <cmath>
#include <random>

#include "cforest/data.hpp"
#include "cforest/error.hpp"

namespace cforest {

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

SimulatedData simulate_confounded(Index n, Index p, std::uint64_t seed) {
  if (n < 1) throw ParameterError("n must be at least 1");
  if (p < 6) throw ParameterError("simulate_confounded needs p >= 6, got " + std::to_string(p));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n), w(n), e(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
    e[i] = logistic(x(i, 0));
    w[i] = unif(rng) < e[i] ? 1.0 : 0.0;
    y[i] = 2.0 * x.row(i).head(6).mean() + normal(rng);
  }
  Oracle oracle{e, Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  return {Dataset(std::move(x), std::move(y), std::move(w)), std::move(oracle)};
}

void SchoolEffectSpec::validate() const {
  if (num_student_covariates < 0 || num_school_covariates < 0 || num_student_covariates + num_school_covariates < 1)
    throw ParameterError("need at least one covariate");
  const int p = num_student_covariates + num_school_covariates;
  for (double sd : {beta_sd, gamma_sd, noise_sd}) {
    if (!(sd >= 0.0) || !std::isfinite(sd)) throw ParameterError("standard deviations must be finite and >= 0");
  }
  if (!(propensity > 0.0 && propensity < 1.0)) throw ParameterError("propensity must lie in (0, 1)");
  if (!std::isfinite(propensity_slope) || !std::isfinite(tau_base) || !std::isfinite(tau_step))
    throw ParameterError("effect parameters must be finite");
  if (tau_feature < 0 || tau_feature >= p) throw ParameterError("tau_feature out of range");
  if (propensity_feature < 0 || propensity_feature >= p) throw ParameterError("propensity_feature out of range");
  if (!main_coefficients.empty() && static_cast<int>(main_coefficients.size()) != p)
    throw ParameterError("main_coefficients must have one entry per covariate");
  if (!(size_spread >= 0.0 && size_spread < 1.0)) throw ParameterError("size_spread must lie in [0, 1)");
}

SimulatedData simulate_school_data(Index num_clusters, Index mean_cluster_size, const SchoolEffectSpec& spec,
                                   std::uint64_t seed) {
  if (num_clusters < 2) throw ParameterError("simulate_school_data needs at least 2 clusters");
  if (mean_cluster_size < 1) throw ParameterError("mean cluster size must be at least 1");
  spec.validate();

  const int qs = spec.num_student_covariates;
  const int qc = spec.num_school_covariates;
  const Index p = qs + qc;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  if (spec.main_coefficients.empty()) {
    if (qs > 0) coef[0] = 0.5;
    if (qc > 0) coef[qs] = 0.5;
  } else {
    coef = Eigen::Map<const Eigen::VectorXd>(spec.main_coefficients.data(), p);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const double lo = std::max(1.0, std::ceil(mean_cluster_size * (1.0 - spec.size_spread)));
  const double hi = std::max(lo, std::floor(mean_cluster_size * (1.0 + spec.size_spread)));
  std::uniform_int_distribution<Index> size_dist(static_cast<Index>(lo), static_cast<Index>(hi));

  std::vector<Index> sizes(num_clusters);
  Eigen::MatrixXd school_x(num_clusters, qc);
  Eigen::VectorXd beta(num_clusters), gamma(num_clusters);
  Index n = 0;
  for (Index j = 0; j < num_clusters; ++j) {
    sizes[j] = size_dist(rng);
    n += sizes[j];
    for (int k = 0; k < qc; ++k) school_x(j, k) = normal(rng);
    beta[j] = spec.beta_sd * normal(rng);
    gamma[j] = spec.gamma_sd * normal(rng);
  }

  const double base_logit = std::log(spec.propensity / (1.0 - spec.propensity));
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n), w(n);
  Oracle oracle{Eigen::VectorXd(n), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  std::vector<std::string> labels(n);
  Index i = 0;
  for (Index j = 0; j < num_clusters; ++j) {
    for (Index s = 0; s < sizes[j]; ++s, ++i) {
      for (int k = 0; k < qs; ++k) x(i, k) = normal(rng);
      x.row(i).tail(qc) = school_x.row(j);
      const double tau = spec.tau_base + (x(i, spec.tau_feature) > spec.tau_threshold ? spec.tau_step : 0.0);
      const double e = spec.propensity_slope == 0.0
                           ? spec.propensity
                           : 1.0 / (1.0 + std::exp(-(base_logit + spec.propensity_slope * x(i, spec.propensity_feature))));
      w[i] = unif(rng) < e ? 1.0 : 0.0;
      y[i] = x.row(i).dot(coef) + w[i] * (tau + gamma[j]) + beta[j] + spec.noise_sd * normal(rng);
      oracle.true_propensity[i] = e;
      oracle.true_cate[i] = tau;
      oracle.cluster_effect[i] = gamma[j];
      labels[i] = std::to_string(j + 1);
    }
  }

  std::vector<std::string> names;
  for (int k = 0; k < qs; ++k) names.push_back("S" + std::to_string(k + 1));
  for (int k = 0; k < qc; ++k) names.push_back("X" + std::to_string(k + 1));
  return {Dataset(std::move(x), std::move(y), std::move(w), std::move(labels), std::move(names)), std::move(oracle)};
}

}  // namespace cforest
