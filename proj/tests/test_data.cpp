#include <doctest.h>

#include <algorithm>
#include <set>

#include "cforest/data.hpp"
#include "cforest/error.hpp"
#include "test_util.hpp"

using namespace cforest;

namespace {

Dataset small(std::vector<std::string> labels = {}) {
  Eigen::MatrixXd x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  return Dataset(x, Eigen::Vector4d(1, 2, 3, 4), Eigen::Vector4d(0, 1, 0, 1), std::move(labels));
}

}  // namespace

TEST_CASE("dataset validates shapes, values and treatment") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)), ValidationError);
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXd::Zero(3), Eigen::Vector3d(0, 0.5, 1)), ValidationError);
  CHECK_THROWS_AS(Dataset(Eigen::MatrixXd(0, 2), Eigen::VectorXd(0), Eigen::VectorXd(0)), ValidationError);
  x(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)), ValidationError);
  CHECK_THROWS_AS(small({"a", "b"}), ValidationError);
}

TEST_CASE("cluster labels map to dense indices by first appearance") {
  const Dataset d = small({"s9", "s2", "s9", "s5"});
  CHECK(d.num_clusters() == 3);
  CHECK(d.cluster() == std::vector<int>{0, 1, 0, 2});
  CHECK(d.cluster_labels() == std::vector<std::string>{"s9", "s2", "s5"});
  const ClusterIndex idx = build_cluster_index(d);
  CHECK(idx.members[0] == std::vector<int>{0, 2});
  CHECK(idx.sizes() == std::vector<int>{2, 1, 1});
}

TEST_CASE("missing cluster labels give singleton clusters") {
  const Dataset d = small();
  CHECK(d.num_clusters() == 4);
  CHECK(d.feature_names() == std::vector<std::string>{"X1", "X2"});
  CHECK(d.feature_index("X2") == 1);
  CHECK_FALSE(d.feature_index("X3").has_value());
}

TEST_CASE("cluster index partitions the samples") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 50;
    std::vector<std::string> labels(n);
    std::uniform_int_distribution<int> pick(0, 7);
    for (auto& l : labels) l = "c" + std::to_string(pick(rng));
    const Dataset d(testutil::normal_matrix(n, 2, rep), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), labels);
    const ClusterIndex idx = build_cluster_index(d);
    std::vector<int> seen;
    for (Index j = 0; j < idx.num_clusters(); ++j) {
      CHECK(idx.size(j) >= 1);
      for (int i : idx.members[j]) {
        CHECK(idx.cluster_of[i] == j);
        CHECK(labels[i] == d.cluster_labels()[j]);
        seen.push_back(i);
      }
    }
    std::sort(seen.begin(), seen.end());
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    CHECK(seen == all);
  }
}

TEST_CASE("build_cluster_index rejects gaps in dense labels") {
  const std::vector<int> labels = {0, 2, 2};
  CHECK_THROWS_AS(build_cluster_index(labels), ValidationError);
}

TEST_CASE("row subsets and derived datasets") {
  const Dataset d = small({"a", "b", "a", "c"});
  const std::vector<int> keep = {3, 0};
  const Dataset r = d.rows(keep);
  CHECK(r.n() == 2);
  CHECK(r.outcome()[0] == 4);
  CHECK(r.cluster_labels() == std::vector<std::string>{"c", "a"});
  CHECK(d.without_clusters().num_clusters() == 4);
  const Dataset o = d.with_outcome(Eigen::Vector4d(9, 9, 9, 9));
  CHECK(o.outcome()[2] == 9);
  CHECK(o.cluster() == d.cluster());
}

TEST_CASE("CSV ingestion with one-hot expansion") {
  const auto dir = testutil::temp_dir("csv");
  const auto path = testutil::write_file(dir / "d.csv",
                                         "age,grade,school,Y,W\n"
                                         "1.5,10,A,2.0,1\n"
                                         "2.5,9,B,3.0,0\n"
                                         "\"3.5\",2,A,-1e-3,1\n");
  SchemaConfig schema;
  schema.cluster_column = "school";
  schema.categorical_columns = {"grade"};
  const Dataset d = load_csv(path, schema);
  CHECK(d.n() == 3);
  CHECK(d.feature_names() == std::vector<std::string>{"age", "grade.2", "grade.9", "grade.10"});
  CHECK(d.feature_sources() == std::vector<std::string>{"age", "grade", "grade", "grade"});
  CHECK(d.features()(0, 3) == 1.0);
  CHECK(d.features()(2, 1) == 1.0);
  CHECK(d.features().row(1).sum() == doctest::Approx(3.5));
  CHECK(d.outcome()[2] == -1e-3);
  CHECK(d.num_clusters() == 2);
}

TEST_CASE("CSV errors carry the kind and row") {
  const auto dir = testutil::temp_dir("csv_errors");
  SchemaConfig schema;

  const auto missing = testutil::write_file(dir / "missing.csv", "x,Y,W\n1,2,0\n1,NA,1\n");
  try {
    load_csv(missing, schema);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
    CHECK(std::string(e.what()).find("column 'Y'") != std::string::npos);
  }
  const auto text = testutil::write_file(dir / "text.csv", "x,Y,W\n1,2,0\nabc,1,1\n");
  try {
    load_csv(text, schema);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.row() == 3);
    CHECK(std::string(e.what()).find("abc") != std::string::npos);
  }
  const auto blank = testutil::write_file(dir / "blank.csv", "x,Y,W\n,2,0\n");
  CHECK_THROWS_AS(load_csv(blank, schema), ParseError);
  const auto treat = testutil::write_file(dir / "treat.csv", "x,Y,W\n1,2,2\n");
  CHECK_THROWS_AS(load_csv(treat, schema), ValidationError);

  const auto ok = testutil::write_file(dir / "ok.csv", "x,Y,W\n1,2,0\n");
  SchemaConfig absent;
  absent.outcome_column = "outcome";
  CHECK_THROWS_AS(load_csv(ok, absent), SchemaError);
  SchemaConfig clash;
  clash.treatment_column = "Y";
  CHECK_THROWS_AS(load_csv(ok, clash), SchemaError);
  SchemaConfig cat_role;
  cat_role.categorical_columns = {"W"};
  CHECK_THROWS_AS(load_csv(ok, cat_role), SchemaError);
  CHECK_THROWS_AS(load_csv((dir / "nope.csv").string(), schema), IoError);

  try {
    load_csv(missing, schema);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
}

TEST_CASE("write_csv round-trips exactly") {
  const SimulatedData sim = simulate_school_data(5, 10, SchoolEffectSpec{}, 3);
  const auto dir = testutil::temp_dir("roundtrip");
  write_csv(sim.data, (dir / "d.csv").string());
  SchemaConfig schema;
  schema.cluster_column = "cluster";
  const Dataset back = load_csv((dir / "d.csv").string(), schema);
  CHECK(back.features() == sim.data.features());
  CHECK(back.outcome() == sim.data.outcome());
  CHECK(back.treatment() == sim.data.treatment());
  CHECK(back.cluster() == sim.data.cluster());
  CHECK(back.feature_names() == sim.data.feature_names());
}

TEST_CASE("confounded generator") {
  const SimulatedData a = simulate_confounded(1000, 10, 1);
  CHECK(a.data.n() == 1000);
  CHECK(a.data.p() == 10);
  CHECK(a.data.num_clusters() == 1000);
  CHECK(a.oracle.true_cate.isZero());
  const SimulatedData b = simulate_confounded(1000, 10, 1);
  CHECK(a.data.outcome() == b.data.outcome());
  CHECK_THROWS_AS(simulate_confounded(10, 5, 1), ParameterError);
  // Treatment follows X1: treated units have larger X1 on average.
  double treated = 0, control = 0;
  int nt = 0;
  for (Index i = 0; i < 1000; ++i) {
    if (a.data.treatment()[i] == 1.0) {
      treated += a.data.features()(i, 0);
      ++nt;
    } else {
      control += a.data.features()(i, 0);
    }
  }
  CHECK(treated / nt > control / (1000 - nt) + 0.3);
}

TEST_CASE("school generator") {
  SchoolEffectSpec spec;
  const SimulatedData sim = simulate_school_data(76, 20, spec, 9);
  const Dataset& d = sim.data;
  CHECK(d.num_clusters() == 76);
  CHECK(d.p() == 8);
  CHECK(d.feature_names()[0] == "S1");
  CHECK(d.feature_names()[4] == "X1");
  const ClusterIndex idx = build_cluster_index(d);
  for (Index j = 0; j < idx.num_clusters(); ++j) {
    CHECK(idx.size(j) >= 10);
    CHECK(idx.size(j) <= 30);
    for (int i : idx.members[j]) {
      CHECK(d.features().row(i).tail(4) == d.features().row(idx.members[j][0]).tail(4));
      CHECK(sim.oracle.cluster_effect[i] == sim.oracle.cluster_effect[idx.members[j][0]]);
    }
  }
  CHECK((sim.oracle.true_cate.array() == 0.25).all());
  CHECK((sim.oracle.true_propensity.array() == 0.5).all());

  spec.tau_step = 1.0;
  spec.tau_feature = 0;
  const SimulatedData het = simulate_school_data(4, 50, spec, 2);
  for (Index i = 0; i < het.data.n(); ++i)
    CHECK(het.oracle.true_cate[i] == (het.data.features()(i, 0) > 0 ? 1.25 : 0.25));

  SchoolEffectSpec bad;
  bad.propensity = 1.0;
  CHECK_THROWS_AS(simulate_school_data(4, 5, bad, 1), ParameterError);
  CHECK_THROWS_AS(simulate_school_data(1, 5, SchoolEffectSpec{}, 1), ParameterError);
}

TEST_CASE("cluster k-fold assignment") {
  std::vector<int> labels;
  for (int j = 0; j < 76; ++j) labels.insert(labels.end(), 3, j);
  const ClusterIndex idx = build_cluster_index(labels);
  const std::vector<int> fold = split_clusters_kfold(idx, 5, 17);
  std::vector<int> counts(5, 0);
  for (int f : fold) ++counts[f];
  std::sort(counts.rbegin(), counts.rend());
  CHECK(counts == std::vector<int>{16, 15, 15, 15, 15});
  CHECK(split_clusters_kfold(idx, 5, 17) == fold);

  const std::vector<int> loo = split_clusters_kfold(idx, 76, 1);
  CHECK(std::set<int>(loo.begin(), loo.end()).size() == 76);
  CHECK_THROWS_AS(split_clusters_kfold(idx, 77, 1), ParameterError);
  CHECK_THROWS_AS(split_clusters_kfold(idx, 0, 1), ParameterError);
}
