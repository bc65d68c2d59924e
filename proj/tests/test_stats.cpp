#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cforest/stats.hpp"
#include "test_util.hpp"

using namespace cforest;

TEST_CASE("quantiles interpolate between order statistics") {
  const Eigen::Vector4d v(4, 1, 3, 2);
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(v, 0.5) == doctest::Approx(2.5));
  CHECK(quantile(v, 1.0 / 3.0) == doctest::Approx(2.0));
  CHECK(median(Eigen::Vector3d(5, -1, 2)) == 2.0);
  CHECK_THROWS_AS(quantile(Eigen::VectorXd(0), 0.5), ParameterError);
}

TEST_CASE("Welch test") {
  const TTestResult r = welch_t_test(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(2, 4, 6));
  // se^2 = 1/3 + 4/3, t = -2 / sqrt(5/3), df = (5/3)^2 / ((1/3)^2 / 2 + (4/3)^2 / 2)
  CHECK(r.t == doctest::Approx(-2.0 / std::sqrt(5.0 / 3.0)));
  CHECK(r.df == doctest::Approx((25.0 / 9.0) / (1.0 / 18.0 + 16.0 / 18.0)));
  CHECK(r.ci_lower < -2.0);
  CHECK(r.ci_upper > -2.0);

  const Eigen::VectorXd a = testutil::normal_matrix(15, 1, 1).col(0);
  const Eigen::VectorXd b = testutil::normal_matrix(11, 1, 2).col(0).array() + 0.5;
  const TTestResult ab = welch_t_test(a, b), ba = welch_t_test(b, a);
  CHECK(ab.t == doctest::Approx(-ba.t));
  CHECK(ab.p_value == doctest::Approx(ba.p_value));
  CHECK(ab.df == doctest::Approx(ba.df));

  const TTestResult same = welch_t_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p_value == doctest::Approx(1.0));

  const TTestResult flat = welch_t_test(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 1));
  CHECK(flat.p_value == 1.0);
  const TTestResult apart = welch_t_test(Eigen::Vector2d(2, 2), Eigen::Vector2d(1, 1));
  CHECK(std::isinf(apart.t));
  CHECK(apart.p_value == 0.0);
  CHECK_THROWS_AS(welch_t_test(Eigen::VectorXd::Constant(1, 1.0), b), ParameterError);
}

TEST_CASE("ANOVA") {
  const Eigen::VectorXd v = (Eigen::VectorXd(6) << 1, 2, 3, 1, 2, 3).finished();
  const std::vector<int> g = {0, 0, 0, 1, 1, 1};
  const AnovaResult equal = one_way_anova(v, std::span<const int>(g));
  CHECK(equal.f == doctest::Approx(0.0));
  CHECK(equal.p_value == doctest::Approx(1.0));
  CHECK(equal.df_between == 1.0);
  CHECK(equal.df_within == 4.0);

  // With two groups F equals the square of the pooled-variance t statistic.
  const Eigen::VectorXd a = testutil::normal_matrix(12, 1, 3).col(0);
  const Eigen::VectorXd b = testutil::normal_matrix(13, 1, 4).col(0).array() + 0.4;
  Eigen::VectorXd all(25);
  all << a, b;
  std::vector<int> labels(25, 7);
  std::fill(labels.begin() + 12, labels.end(), -3);
  const AnovaResult r = one_way_anova(all, std::span<const int>(labels));
  const double sp2 = (11 * sample_variance(a) + 12 * sample_variance(b)) / 23.0;
  const double t = (a.mean() - b.mean()) / std::sqrt(sp2 * (1.0 / 12 + 1.0 / 13));
  CHECK(r.f == doctest::Approx(t * t));
  CHECK(r.p_value == doctest::Approx(t_two_sided_p(t, 23.0)));

  const Eigen::VectorXd steps = (Eigen::VectorXd(4) << 1, 1, 2, 2).finished();
  const std::vector<int> g2 = {0, 0, 1, 1};
  const AnovaResult exact = one_way_anova(steps, std::span<const int>(g2));
  CHECK(std::isinf(exact.f));
  CHECK(exact.p_value == 0.0);
  const std::vector<int> g1 = {0, 0, 0, 0};
  CHECK_THROWS_AS(one_way_anova(steps, std::span<const int>(g1)), ParameterError);
}

TEST_CASE("tercile groups") {
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(9, 1, 9);
  CHECK(tercile_groups(v) == std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2});
  const std::vector<int> tied = tercile_groups(Eigen::VectorXd::Constant(5, 2.0));
  CHECK(std::all_of(tied.begin(), tied.end(), [](int g) { return g == 0; }));
}

TEST_CASE("OLS with HC3 errors") {
  Eigen::MatrixXd x(6, 1);
  x << 1, 2, 3, 4, 5, 6;
  const Eigen::VectorXd y = (2.0 + 3.0 * x.col(0).array()).matrix();
  const RegressionResult exact = ols_hc(y, x, {"dose"});
  CHECK(exact.coefficients[0].name == "(Intercept)");
  CHECK(exact.coefficients[0].estimate == doctest::Approx(2.0));
  CHECK(exact.coefficients[1].estimate == doctest::Approx(3.0));
  CHECK(exact.coefficients[1].std_err < 1e-6);
  CHECK(exact.df == 4.0);

  // Hand sandwich on four points.
  Eigen::MatrixXd x4(4, 1);
  x4 << 0, 1, 2, 4;
  const Eigen::Vector4d y4(1, 0, 3, 5);
  const RegressionResult r = ols_hc(y4, x4);
  Eigen::MatrixXd design(4, 2);
  design << 1, 0, 1, 1, 1, 2, 1, 4;
  const Eigen::Matrix2d bread = (design.transpose() * design).inverse();
  const Eigen::Vector2d beta = bread * design.transpose() * y4;
  const Eigen::Vector4d e = y4 - design * beta;
  Eigen::Matrix2d meat = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 4; ++i) {
    const double h = design.row(i) * bread * design.row(i).transpose();
    meat += e[i] * e[i] / ((1 - h) * (1 - h)) * design.row(i).transpose() * design.row(i);
  }
  const Eigen::Matrix2d v = bread * meat * bread;
  CHECK(r.coefficients[1].estimate == doctest::Approx(beta[1]));
  CHECK(r.coefficients[0].std_err == doctest::Approx(std::sqrt(v(0, 0))));
  CHECK(r.coefficients[1].std_err == doctest::Approx(std::sqrt(v(1, 1))));
  CHECK(r.coefficients[1].p_value == doctest::Approx(t_two_sided_p(beta[1] / std::sqrt(v(1, 1)), 2.0)));
}

TEST_CASE("OLS is invariant to row order and reports collinear columns") {
  const Eigen::MatrixXd x = testutil::normal_matrix(20, 2, 5);
  const Eigen::VectorXd y = testutil::normal_matrix(20, 1, 6).col(0);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  const RegressionResult a = ols_hc(y, x), b = ols_hc(y(perm).eval(), x(perm, Eigen::all).eval());
  for (int k = 0; k < 3; ++k) {
    CHECK(a.coefficients[k].estimate == doctest::Approx(b.coefficients[k].estimate));
    CHECK(a.coefficients[k].std_err == doctest::Approx(b.coefficients[k].std_err));
  }

  Eigen::MatrixXd collinear(20, 3);
  collinear << x, x.col(0) * 2.0;
  try {
    ols_hc(y, collinear, {"a", "b", "twice_a"});
    FAIL("expected a rank error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("twice_a") != std::string::npos);
  }
  CHECK_THROWS_AS(ols_hc(y.head(3).eval(), x.topRows(3).eval()), NumericalError);
}
