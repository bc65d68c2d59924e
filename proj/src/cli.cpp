#include "cforest/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "cforest/causal.hpp"
#include "cforest/inference.hpp"
#include "cforest/stats.hpp"
#include "csv_util.hpp"

namespace cforest::cli {
namespace {

constexpr const char* kCalibrationCaveat =
    "Calibration-test p-values rest on heuristic large-sample reasoning; no formal asymptotic theory is established "
    "for this test, so treat them as descriptive.";

void check_keys(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const Json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("invalid value for '" + std::string(key) + "' in " + where);
  }
}

template <typename T>
void read_optional(const Json& j, const char* key, std::optional<T>& dst, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    dst.reset();
    return;
  }
  T value{};
  read(j, key, value, where);
  dst = value;
}

SchoolEffectSpec parse_school_spec(const Json& j, SchoolEffectSpec s) {
  const std::string where = "simulate.school";
  check_keys(j,
             {"num_student_covariates", "num_school_covariates", "main_coefficients", "tau_base", "tau_step",
              "tau_feature", "tau_threshold", "beta_sd", "gamma_sd", "noise_sd", "propensity", "propensity_slope",
              "propensity_feature", "size_spread"},
             where);
  read(j, "num_student_covariates", s.num_student_covariates, where);
  read(j, "num_school_covariates", s.num_school_covariates, where);
  read(j, "main_coefficients", s.main_coefficients, where);
  read(j, "tau_base", s.tau_base, where);
  read(j, "tau_step", s.tau_step, where);
  read(j, "tau_feature", s.tau_feature, where);
  read(j, "tau_threshold", s.tau_threshold, where);
  read(j, "beta_sd", s.beta_sd, where);
  read(j, "gamma_sd", s.gamma_sd, where);
  read(j, "noise_sd", s.noise_sd, where);
  read(j, "propensity", s.propensity, where);
  read(j, "propensity_slope", s.propensity_slope, where);
  read(j, "propensity_feature", s.propensity_feature, where);
  read(j, "size_spread", s.size_spread, where);
  return s;
}

Json school_spec_to_json(const SchoolEffectSpec& s) {
  Json j;
  j["num_student_covariates"] = s.num_student_covariates;
  j["num_school_covariates"] = s.num_school_covariates;
  j["main_coefficients"] = s.main_coefficients;
  j["tau_base"] = s.tau_base;
  j["tau_step"] = s.tau_step;
  j["tau_feature"] = s.tau_feature;
  j["tau_threshold"] = s.tau_threshold;
  j["beta_sd"] = s.beta_sd;
  j["gamma_sd"] = s.gamma_sd;
  j["noise_sd"] = s.noise_sd;
  j["propensity"] = s.propensity;
  j["propensity_slope"] = s.propensity_slope;
  j["propensity_feature"] = s.propensity_feature;
  j["size_spread"] = s.size_spread;
  return j;
}

ForestParams parse_forest(const Json& j, ForestParams base, const std::string& where) {
  if (j.is_object() && j.contains("seed")) throw ConfigError("set the seed at the top level, not in " + where);
  try {
    return params_from_json(j, base);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (in " + where + ")");
  }
}

Json forest_config_json(const ForestParams& p) {
  Json j = params_to_json(p);
  j.erase("seed");
  return j;
}

// ---------------------------------------------------------------------------
// Report fragments

Json ate_json(const AteResult& a) {
  return {{"estimate", a.estimate},
          {"std_err", a.std_err},
          {"ci_lower", a.ci_lower()},
          {"ci_upper", a.ci_upper()},
          {"n_clusters", a.n_clusters}};
}

Json coefficient_json(double estimate, double se, double t, double p, double df) {
  return {{"estimate", estimate}, {"std_err", se}, {"statistic", t}, {"df", df}, {"p_value", p}};
}

Json calibration_json(const CalibrationResult& c) {
  Json j;
  j["mean_forest_prediction"] = coefficient_json(c.mean_coef, c.mean_se, c.mean_t, c.mean_p, c.df);
  j["differential_forest_prediction"] =
      c.degenerate ? Json(nullptr) : coefficient_json(c.diff_coef, c.diff_se, c.diff_t, c.diff_p, c.df);
  j["degenerate"] = c.degenerate;
  j["caveat"] = kCalibrationCaveat;
  return j;
}

Json ttest_json(const TTestResult& t) {
  return {{"statistic", t.t},       {"df", t.df},           {"p_value", t.p_value}, {"mean_a", t.mean_a},
          {"mean_b", t.mean_b},     {"ci_lower", t.ci_lower}, {"ci_upper", t.ci_upper}};
}

Json anova_json(const AnovaResult& a) {
  return {{"statistic", a.f},          {"df_between", a.df_between}, {"df_within", a.df_within},
          {"ss_between", a.ss_between}, {"ss_within", a.ss_within},   {"p_value", a.p_value},
          {"num_groups", a.num_groups}};
}

Json regression_json(const RegressionResult& r) {
  Json rows = Json::array();
  for (const Coefficient& c : r.coefficients) {
    rows.push_back({{"name", c.name},
                    {"estimate", c.estimate},
                    {"std_err", c.std_err},
                    {"statistic", c.t},
                    {"df", r.df},
                    {"p_value", c.p_value}});
  }
  return {{"covariance", "HC3"}, {"coefficients", rows}};
}

Json names_json(const Dataset& d, const std::vector<int>& features) {
  Json j = Json::array();
  for (int f : features) j.push_back(d.feature_names()[f]);
  return j;
}

Json importance_json(const Dataset& d, const Eigen::VectorXd& importance) {
  Json j = Json::array();
  for (Index f = 0; f < importance.size(); ++f) j.push_back({{"feature", d.feature_names()[f]}, {"importance", importance[f]}});
  return j;
}

// ---------------------------------------------------------------------------
// Files

std::filesystem::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& header) : path_(path.string()), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path_ + "' for writing");
    out_ << header << '\n';
  }
  ~CsvWriter() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) throw IoError("failed writing '" + path_ + "'");
  }
  std::ostream& stream() { return out_; }

 private:
  std::string path_;
  std::ofstream out_;
};

std::string num(double v) { return detail::format_double(v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

void write_histogram(const Eigen::VectorXd& tau, const std::vector<bool>& missing, int bins,
                     const std::filesystem::path& path) {
  std::vector<double> v;
  for (Index i = 0; i < tau.size(); ++i) {
    if (!missing[i]) v.push_back(tau[i]);
  }
  CsvWriter w(path, "bin,lower,upper,count");
  if (v.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  const int num_bins = hi > lo ? bins : 1;
  const double width = hi > lo ? (hi - lo) / num_bins : 0.0;
  std::vector<long> counts(static_cast<std::size_t>(num_bins), 0);
  for (double x : v) {
    const int b = width > 0.0 ? std::min(num_bins - 1, static_cast<int>((x - lo) / width)) : 0;
    ++counts[b];
  }
  for (int b = 0; b < num_bins; ++b) {
    const double upper = b == num_bins - 1 ? hi : lo + (b + 1) * width;
    w.stream() << b + 1 << ',' << num(lo + b * width) << ',' << num(upper) << ',' << counts[b] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Analysis building blocks

Dataset load_data(const RunConfig& c) {
  if (!c.data) throw ConfigError("no input data: pass --data or set \"data\" in the config");
  return load_csv(*c.data, c.schema);
}

PipelineOptions pipeline_options(const RunConfig& c, bool cluster, bool trivial_propensity) {
  PipelineOptions o;
  o.nuisance_params = c.nuisance_forest;
  o.nuisance_params.seed = c.seed;
  o.causal_params = c.causal_forest;
  o.causal_params.seed = c.seed;
  o.cluster = cluster;
  o.trivial_propensity = trivial_propensity;
  o.select_features = c.select_features;
  o.tune = c.tune;
  o.pilot_trees = c.pilot_trees;
  o.final_samples_per_cluster = c.final_samples_per_cluster;
  return o;
}

struct Analysis {
  ClusterIndex idx;  // clusters used for inference
  PipelineResult pipe;
  Eigen::VectorXd scores;
  AteResult ate;
};

Analysis analyze(const Dataset& d, const RunConfig& c, bool cluster, bool trivial_propensity) {
  Analysis a;
  a.idx = build_cluster_index(cluster ? d : d.without_clusters());
  a.pipe = run_pipeline(d, pipeline_options(c, cluster, trivial_propensity));
  a.scores = doubly_robust_scores(d, a.pipe.nuisances, a.pipe.cate);
  a.ate = ate_cluster_robust(a.scores, a.idx);
  return a;
}

Json subgroup_json(const Analysis& a) {
  try {
    const SubgroupResult s = subgroup_ate_by_median(a.scores, a.idx, a.pipe.cate.tau);
    return {{"median_cate", s.median_cate},
            {"high", ate_json(s.high)},
            {"low", ate_json(s.low)},
            {"difference", s.difference},
            {"std_err", s.difference_se},
            {"ci_lower", s.difference - 1.96 * s.difference_se},
            {"ci_upper", s.difference + 1.96 * s.difference_se},
            {"degenerate", false}};
  } catch (const NumericalError& e) {
    return {{"degenerate", true}, {"message", e.what()}};
  }
}

Json cate_summary_json(const CateEstimates& cate) {
  std::vector<double> v;
  for (Index i = 0; i < cate.tau.size(); ++i) {
    if (!cate.missing[i]) v.push_back(cate.tau[i]);
  }
  Json j;
  j["missing"] = cate.num_missing();
  if (!v.empty()) {
    const Eigen::Map<const Eigen::VectorXd> m(v.data(), static_cast<Index>(v.size()));
    j["mean"] = m.mean();
    j["sd"] = v.size() > 1 ? std::sqrt(sample_variance(m)) : 0.0;
    j["min"] = m.minCoeff();
    j["max"] = m.maxCoeff();
  }
  return j;
}

Json analysis_json(const Dataset& d, const Analysis& a) {
  const PipelineResult& p = a.pipe;
  Json j;
  j["inference_clusters"] = a.idx.num_clusters();
  j["nuisances"] = {{"y_source", p.nuisances.y_source},
                    {"w_source", p.nuisances.w_source},
                    {"propensity_clipped", p.nuisances.propensity_clipped},
                    {"y_oob_filled", p.nuisances.y_oob_filled},
                    {"w_oob_filled", p.nuisances.w_oob_filled}};
  j["selected_features"] = names_json(d, p.selected_features);
  j["selection_fallback"] = p.selection_fallback;
  if (p.tuning) {
    j["tuning"] = {{"best_index", p.tuning->best_index}, {"losses", p.tuning->losses}};
  } else {
    j["tuning"] = nullptr;
  }
  j["final_forest"] = params_to_json(p.model.params);
  j["ate"] = ate_json(a.ate);
  j["subgroup"] = subgroup_json(a);
  j["calibration"] = calibration_json(test_calibration(d, p.nuisances, p.cate, a.idx));
  j["variable_importance"] = importance_json(d, p.final_importance);
  j["cate_summary"] = cate_summary_json(p.cate);
  j["cate"] = std::vector<double>(p.cate.tau.data(), p.cate.tau.data() + p.cate.tau.size());
  j["warnings"] = {{"propensity_clipped", p.nuisances.propensity_clipped},
                   {"empty_leaf_skips", p.cate.empty_leaf_skips},
                   {"missing_cate", p.cate.num_missing()},
                   {"messages", p.warnings}};
  return j;
}

Json data_json(const Dataset& d) {
  return {{"n", d.n()}, {"p", d.p()}, {"clusters", d.num_clusters()}, {"feature_names", d.feature_names()}};
}

void write_school_scores(const Dataset& d, const Analysis& a, const std::filesystem::path& path) {
  CsvWriter w(path, "cluster,size,school_score,mean_cate");
  const Eigen::VectorXd s = school_scores(a.scores, a.idx);
  for (Index j = 0; j < a.idx.num_clusters(); ++j) {
    double sum = 0.0;
    for (int i : a.idx.members[j]) sum += a.pipe.cate.tau[i];
    const std::string label = a.idx.num_clusters() == d.num_clusters() ? d.cluster_labels()[j] : std::to_string(j + 1);
    w.stream() << csv_field(label) << ',' << a.idx.size(j) << ',' << num(s[j]) << ',' << num(sum / a.idx.size(j))
               << '\n';
  }
}

void write_report(const Json& report, const std::filesystem::path& dir, std::ostream& out) {
  save_json(report, (dir / "report.json").string());
  out << "wrote " << (dir / "report.json").string() << '\n';
}

Json report_header(const std::string& command, const RunConfig& c) {
  Json j;
  j["command"] = command;
  j["config"] = config_to_json(c);
  return j;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  const SimulateConfig& s = c.simulate;
  std::optional<SimulatedData> sim;
  if (s.kind == "school") {
    sim = simulate_school_data(s.clusters, s.cluster_size, s.school, c.seed);
  } else if (s.kind == "confounded") {
    sim = simulate_confounded(s.n, s.p, c.seed);
  } else {
    throw ConfigError("unknown simulation kind '" + s.kind + "' (expected school or confounded)");
  }
  const auto dir = prepare_out_dir(c.out);
  write_csv(sim->data, (dir / "data.csv").string());
  write_oracle_csv(sim->oracle, (dir / "oracle.csv").string());
  out << "n=" << sim->data.n() << " p=" << sim->data.p() << " J=" << sim->data.num_clusters() << '\n';
  out << "wrote " << (dir / "data.csv").string() << " and " << (dir / "oracle.csv").string() << '\n';
  return 0;
}

int cmd_analyze(const RunConfig& c, const std::optional<std::string>& save_model, std::ostream& out) {
  const Dataset d = load_data(c);
  const auto dir = prepare_out_dir(c.out);
  const Analysis a = analyze(d, c, c.cluster, c.trivial_propensity);

  Json report = report_header("analyze", c);
  report["data"] = data_json(d);
  report["analysis"] = analysis_json(d, a);
  write_histogram(a.pipe.cate.tau, a.pipe.cate.missing, c.histogram_bins, dir / "cate_histogram.csv");
  write_school_scores(d, a, dir / "school_scores.csv");
  if (save_model) {
    save_json(model_to_json(a.pipe.model), *save_model);
    out << "wrote " << *save_model << '\n';
  }
  write_report(report, dir, out);
  out << "ATE " << a.ate.estimate << " (95% CI " << a.ate.ci_lower() << ", " << a.ate.ci_upper() << ")\n";
  return 0;
}

void write_pairs(const Dataset& d, const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::string& name_a,
                 const std::string& name_b, const std::filesystem::path& path) {
  CsvWriter w(path, "sample,cluster," + name_a + "," + name_b);
  for (Index i = 0; i < d.n(); ++i) {
    w.stream() << i + 1 << ',' << csv_field(d.cluster_labels()[d.cluster()[i]]) << ',' << num(a[i]) << ','
               << num(b[i]) << '\n';
  }
}

int cmd_ablation(const RunConfig& c, const std::string& mode, std::ostream& out) {
  const Dataset d = load_data(c);
  const auto dir = prepare_out_dir(c.out);
  Json report = report_header("ablation", c);
  report["mode"] = mode;
  report["data"] = data_json(d);

  if (mode == "no-cluster" || mode == "no-propensity") {
    const bool no_cluster = mode == "no-cluster";
    const Analysis base = analyze(d, c, true, c.trivial_propensity && no_cluster);
    const Analysis ablated = no_cluster ? analyze(d, c, false, c.trivial_propensity) : analyze(d, c, c.cluster, true);
    const std::string label = no_cluster ? "without_clustering" : "trivial_propensity";
    report["baseline"] = analysis_json(d, base);
    report[label] = analysis_json(d, ablated);
    Json ratio;
    try {
      ratio = variance_ratio(ablated.pipe.cate.tau, base.pipe.cate.tau);
    } catch (const NumericalError& e) {
      ratio = e.what();
    }
    report["variance_ratio"] = ratio;
    write_pairs(d, base.pipe.cate.tau, ablated.pipe.cate.tau, "cate_baseline", "cate_" + label,
                dir / "ablation_pairs.csv");
    write_report(report, dir, out);
    out << "ATE baseline " << base.ate.estimate << " +- " << base.ate.std_err << "; " << label << ' '
        << ablated.ate.estimate << " +- " << ablated.ate.std_err << '\n';
    return 0;
  }
  if (mode == "crossfit") {
    const Dataset working = c.cluster ? d : d.without_clusters();
    NuisanceOptions nopt;
    nopt.params = c.nuisance_forest;
    nopt.params.seed = c.seed;
    nopt.trivial_propensity = c.trivial_propensity;
    const NuisanceEstimates nuis = estimate_nuisances(working, nopt);
    ForestParams params = c.causal_forest;
    params.seed = c.seed;
    const CrossfitResult r = crossfit_cluster_evaluation(working, nuis, c.folds, params);
    report["folds"] = c.folds;
    report["calibration"] = calibration_json(r.calibration);
    CsvWriter w(dir / "ablation_pairs.csv", "sample,cluster,fold,cate_crossfit");
    for (Index i = 0; i < d.n(); ++i) {
      const int cl = working.cluster()[i];
      w.stream() << i + 1 << ',' << csv_field(working.cluster_labels()[cl]) << ',' << r.cluster_fold[cl] + 1 << ','
                 << num(r.predictions[i]) << '\n';
    }
    write_report(report, dir, out);
    if (!r.calibration.degenerate)
      out << "differential t " << r.calibration.diff_t << " (p " << r.calibration.diff_p << ")\n";
    return 0;
  }
  throw ConfigError("unknown ablation mode '" + mode + "' (expected no-cluster, no-propensity or crossfit)");
}

std::vector<int> school_covariate_columns(const Dataset& d, const RunConfig& c) {
  std::vector<int> cols;
  if (!c.school_covariates.empty()) {
    for (const auto& name : c.school_covariates) {
      const auto f = d.feature_index(name);
      if (!f) throw SchemaError("school covariate '" + name + "' is not a feature column");
      cols.push_back(static_cast<int>(*f));
    }
    return cols;
  }
  const ClusterIndex idx = build_cluster_index(d);
  for (Index f = 0; f < d.p(); ++f) {
    bool constant = true;
    for (const auto& members : idx.members) {
      for (int i : members) constant = constant && d.features()(i, f) == d.features()(members[0], f);
    }
    if (constant) cols.push_back(static_cast<int>(f));
  }
  if (cols.empty()) throw SchemaError("no feature is constant within every cluster; name school_covariates explicitly");
  return cols;
}

int cmd_school(const RunConfig& c, std::ostream& out) {
  if (!c.schema.cluster_column) throw ConfigError("school analysis needs a cluster column");
  const Dataset d = load_data(c);
  const auto dir = prepare_out_dir(c.out);
  const std::vector<int> cols = school_covariate_columns(d, c);
  std::vector<int> moderators;
  for (const auto& name : c.moderators) {
    const auto f = d.feature_index(name);
    if (!f) throw SchemaError("moderator '" + name + "' is not a feature column");
    const auto pos = std::find(cols.begin(), cols.end(), static_cast<int>(*f));
    if (pos == cols.end()) throw SchemaError("moderator '" + name + "' is not a school-level covariate");
    moderators.push_back(static_cast<int>(pos - cols.begin()));
  }
  if (c.moderators.empty()) {
    moderators.resize(cols.size());
    std::iota(moderators.begin(), moderators.end(), 0);
  }

  const Analysis a = analyze(d, c, true, c.trivial_propensity);
  const Eigen::VectorXd tau_j = school_scores(a.scores, a.idx);
  const Index num_schools = a.idx.num_clusters();
  Eigen::MatrixXd school_x(num_schools, static_cast<Index>(cols.size()));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    names.push_back(d.feature_names()[cols[k]]);
    for (Index j = 0; j < num_schools; ++j) school_x(j, static_cast<Index>(k)) = d.features()(a.idx.members[j][0], cols[k]);
  }

  ForestParams school_params = c.causal_forest;
  school_params.seed = c.seed;
  school_params.samples_per_cluster.reset();
  const SchoolForestResult forest = school_level_forest_analysis(school_x, tau_j, school_params);

  Json report = report_header("school", c);
  report["data"] = data_json(d);
  report["ate"] = ate_json(a.ate);
  report["school_covariates"] = names;
  report["school_forest"] = {{"calibration", calibration_json(forest.calibration)}, {"warnings", forest.warnings}};
  try {
    report["ols"] = regression_json(ols_hc(tau_j, school_x, names));
  } catch (const NumericalError& e) {
    report["ols"] = {{"error", e.what()}};
  }
  Json mods = Json::array();
  for (int k : moderators) {
    const Eigen::VectorXd x = school_x.col(k);
    const double med = median(x);
    std::vector<double> high, low;
    for (Index j = 0; j < num_schools; ++j) (x[j] > med ? high : low).push_back(tau_j[j]);
    Json m;
    m["name"] = names[k];
    m["median"] = med;
    if (high.size() >= 2 && low.size() >= 2) {
      const Eigen::Map<const Eigen::VectorXd> h(high.data(), static_cast<Index>(high.size()));
      const Eigen::Map<const Eigen::VectorXd> l(low.data(), static_cast<Index>(low.size()));
      m["welch_high_vs_low"] = ttest_json(welch_t_test(h, l));
    } else {
      m["welch_high_vs_low"] = {{"error", "median split leaves fewer than two schools in a group"}};
    }
    const std::vector<int> groups = tercile_groups(x);
    try {
      m["tercile_anova"] = anova_json(one_way_anova(tau_j, groups));
    } catch (const ParameterError& e) {
      m["tercile_anova"] = {{"error", e.what()}};
    }
    mods.push_back(std::move(m));
  }
  report["moderators"] = mods;
  report["warnings"] = a.pipe.warnings;

  {
    CsvWriter w(dir / "school_scores.csv", "cluster,size,school_score,forest_prediction");
    for (Index j = 0; j < num_schools; ++j) {
      w.stream() << csv_field(d.cluster_labels()[j]) << ',' << a.idx.size(j) << ',' << num(tau_j[j]) << ','
                 << num(forest.predictions[j]) << '\n';
    }
  }
  write_report(report, dir, out);
  out << "schools " << num_schools << ", ATE " << a.ate.estimate << " +- " << a.ate.std_err << '\n';
  return 0;
}

void write_error(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  const Json j = {{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}};
  err << j.dump() << '\n';
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace

RunConfig parse_run_config(const Json& j, RunConfig c) {
  const std::string where = "config";
  check_keys(j,
             {"data", "schema", "nuisance_forest", "causal_forest", "seed", "cluster", "trivial_propensity", "folds",
              "select_features", "tune", "pilot_trees", "final_samples_per_cluster", "histogram_bins",
              "school_covariates", "moderators", "out", "simulate"},
             where);
  read_optional(j, "data", c.data, where);
  if (j.contains("schema")) {
    const Json& s = j.at("schema");
    check_keys(s, {"outcome_column", "treatment_column", "cluster_column", "categorical_columns"}, "schema");
    read(s, "outcome_column", c.schema.outcome_column, "schema");
    read(s, "treatment_column", c.schema.treatment_column, "schema");
    read_optional(s, "cluster_column", c.schema.cluster_column, "schema");
    read(s, "categorical_columns", c.schema.categorical_columns, "schema");
  }
  if (j.contains("nuisance_forest")) c.nuisance_forest = parse_forest(j.at("nuisance_forest"), c.nuisance_forest, "nuisance_forest");
  if (j.contains("causal_forest")) c.causal_forest = parse_forest(j.at("causal_forest"), c.causal_forest, "causal_forest");
  read(j, "seed", c.seed, where);
  read(j, "cluster", c.cluster, where);
  read(j, "trivial_propensity", c.trivial_propensity, where);
  read(j, "folds", c.folds, where);
  read(j, "select_features", c.select_features, where);
  read(j, "tune", c.tune, where);
  read(j, "pilot_trees", c.pilot_trees, where);
  read_optional(j, "final_samples_per_cluster", c.final_samples_per_cluster, where);
  read(j, "histogram_bins", c.histogram_bins, where);
  read(j, "school_covariates", c.school_covariates, where);
  read(j, "moderators", c.moderators, where);
  read(j, "out", c.out, where);
  if (j.contains("simulate")) {
    const Json& s = j.at("simulate");
    check_keys(s, {"kind", "n", "p", "clusters", "cluster_size", "school"}, "simulate");
    read(s, "kind", c.simulate.kind, "simulate");
    read(s, "n", c.simulate.n, "simulate");
    read(s, "p", c.simulate.p, "simulate");
    read(s, "clusters", c.simulate.clusters, "simulate");
    read(s, "cluster_size", c.simulate.cluster_size, "simulate");
    if (s.contains("school")) c.simulate.school = parse_school_spec(s.at("school"), c.simulate.school);
  }
  if (c.folds < 2) throw ConfigError("folds must be at least 2");
  if (c.histogram_bins < 1) throw ConfigError("histogram_bins must be positive");
  if (c.pilot_trees < 1) throw ConfigError("pilot_trees must be positive");
  return c;
}

Json config_to_json(const RunConfig& c) {
  Json j;
  j["data"] = c.data ? Json(*c.data) : Json(nullptr);
  j["schema"] = {{"outcome_column", c.schema.outcome_column},
                 {"treatment_column", c.schema.treatment_column},
                 {"cluster_column", c.schema.cluster_column ? Json(*c.schema.cluster_column) : Json(nullptr)},
                 {"categorical_columns", c.schema.categorical_columns}};
  j["nuisance_forest"] = forest_config_json(c.nuisance_forest);
  j["causal_forest"] = forest_config_json(c.causal_forest);
  j["seed"] = c.seed;
  j["cluster"] = c.cluster;
  j["trivial_propensity"] = c.trivial_propensity;
  j["folds"] = c.folds;
  j["select_features"] = c.select_features;
  j["tune"] = c.tune;
  j["pilot_trees"] = c.pilot_trees;
  j["final_samples_per_cluster"] = c.final_samples_per_cluster ? Json(*c.final_samples_per_cluster) : Json(nullptr);
  j["histogram_bins"] = c.histogram_bins;
  j["school_covariates"] = c.school_covariates;
  j["moderators"] = c.moderators;
  j["out"] = c.out;
  j["simulate"] = {{"kind", c.simulate.kind},
                   {"n", c.simulate.n},
                   {"p", c.simulate.p},
                   {"clusters", c.simulate.clusters},
                   {"cluster_size", c.simulate.cluster_size},
                   {"school", school_spec_to_json(c.simulate.school)}};
  return j;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Io: return 3;
    case ErrorKind::Numerical: return 4;
  }
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cluster-robust causal forests"};
  app.require_subcommand(1);

  std::optional<std::string> config_path, data, out_dir, save_model, cluster_column, kind, mode;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds, trees, threads;
  std::optional<Index> n, p, clusters, cluster_size;
  bool no_cluster = false, trivial_propensity = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--threads", threads, "Worker threads (0 = all)");
  };
  auto analysis = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--data", data, "Input CSV");
    sub->add_option("--cluster-column", cluster_column, "Cluster label column");
    sub->add_flag("--no-cluster", no_cluster, "Treat every sample as its own cluster");
    sub->add_flag("--trivial-propensity", trivial_propensity, "Use mean(W) as the propensity");
    sub->add_option("--trees", trees, "Trees per forest");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Write a synthetic dataset and its oracle");
  common(simulate);
  simulate->add_option("--kind", kind, "school | confounded");
  simulate->add_option("--n", n, "Samples (confounded)");
  simulate->add_option("--p", p, "Covariates (confounded)");
  simulate->add_option("--clusters", clusters, "Schools (school)");
  simulate->add_option("--cluster-size", cluster_size, "Mean students per school (school)");

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Run the full causal forest analysis");
  analysis(analyze_cmd);
  analyze_cmd->add_option("--save-model", save_model, "Write the fitted model bundle to this JSON file");

  CLI::App* ablation = app.add_subcommand("ablation", "Compare against an ablated analysis");
  analysis(ablation);
  ablation->add_option("--mode", mode, "no-cluster | no-propensity | crossfit")->required();
  ablation->add_option("--folds", folds, "Folds for crossfit mode");

  CLI::App* school = app.add_subcommand("school", "School-level analysis of doubly robust scores");
  analysis(school);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    write_error(err, "config", e.what(), 2);
    return 2;
  }

  try {
    RunConfig c;
    if (config_path) c = parse_run_config(load_json(*config_path));
    if (data) c.data = *data;
    if (cluster_column) c.schema.cluster_column = *cluster_column;
    if (seed) c.seed = *seed;
    if (out_dir) c.out = *out_dir;
    if (no_cluster) c.cluster = false;
    if (trivial_propensity) c.trivial_propensity = true;
    if (folds) {
      if (*folds < 2) throw ConfigError("--folds must be at least 2");
      c.folds = *folds;
    }
    if (trees) c.nuisance_forest.num_trees = c.causal_forest.num_trees = *trees;
    if (threads) c.nuisance_forest.num_threads = c.causal_forest.num_threads = *threads;
    if (kind) c.simulate.kind = *kind;
    if (n) c.simulate.n = *n;
    if (p) c.simulate.p = *p;
    if (clusters) c.simulate.clusters = *clusters;
    if (cluster_size) c.simulate.cluster_size = *cluster_size;

    if (simulate->parsed()) return cmd_simulate(c, out);
    if (analyze_cmd->parsed()) return cmd_analyze(c, save_model, out);
    if (ablation->parsed()) return cmd_ablation(c, *mode, out);
    return cmd_school(c, out);
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    write_error(err, kind_name(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    write_error(err, "internal", e.what(), 1);
    return 1;
  }
}

}  // namespace cforest::cli
