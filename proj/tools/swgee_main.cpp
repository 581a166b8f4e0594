// Command-line front end: fit, simulate, are, oracle-check. Every run prints
// a single JSON document whose manifest makes it replayable (inputs are
// digested, the seed is always recorded). Exit codes: 0 ok, 1 oracle
// violation, 2 usage or input error, 3 non-convergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "swgee/swgee.hpp"

namespace {

using ordered_json = nlohmann::ordered_json;
using namespace swgee;

int exit_code_for(const Error& e) {
  return e.code() == errc::non_convergence ? 3 : 2;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::input, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::ostringstream hex;
  hex << "fnv1a:" << std::hex << numeric::fnv1a64(buf.str());
  return hex.str();
}

std::string iso_timestamp() {
  const std::time_t now =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SeedChoice {
  std::uint64_t value = 0;
  bool generated = false;
};

SeedChoice resolve_seed(const std::optional<std::uint64_t>& flag) {
  SeedChoice s;
  if (flag) {
    s.value = *flag;
    return s;
  }
  std::random_device rd;
  s.value = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  s.generated = true;
  return s;
}

// The manifest deliberately omits the thread count: outputs are required to
// be byte-identical across --threads values.
ordered_json make_manifest(const std::string& subcommand,
                           ordered_json options,
                           const std::vector<std::string>& input_paths,
                           const std::optional<SeedChoice>& seed,
                           bool stamp) {
  ordered_json m;
  m["subcommand"] = subcommand;
  m["version"] = kVersion;
  m["options"] = std::move(options);
  ordered_json inputs = ordered_json::object();
  for (const std::string& p : input_paths) inputs[p] = file_digest(p);
  m["inputs"] = inputs;
  if (seed) {
    m["seed"] = seed->value;
    m["seed_generated"] = seed->generated;
  } else {
    m["seed"] = nullptr;
  }
  m["timestamp"] = stamp ? ordered_json(iso_timestamp()) : ordered_json();
  return m;
}

void emit(const ordered_json& doc, bool pretty) {
  std::cout << (pretty ? doc.dump(2) : doc.dump()) << "\n";
}

int emit_error(const std::string& subcommand, const Error& e, bool pretty) {
  ordered_json doc;
  doc["manifest"] = {{"subcommand", subcommand}, {"version", kVersion}};
  doc["error"] = {{"category", errc_name(e.code())}, {"message", e.what()}};
  emit(doc, pretty);
  return exit_code_for(e);
}

Structure parse_structure(const std::string& s) {
  if (s == "ind" || s == "independence") return Structure::independence;
  if (s == "exch" || s == "exchangeable") return Structure::exchangeable;
  if (s == "ne" || s == "nested-exch" || s == "nested-exchangeable")
    return Structure::nested_exchangeable;
  if (s == "ed" || s == "exp-decay" || s == "exponential-decay")
    return Structure::exponential_decay;
  throw Error(errc::input, "unknown correlation structure '" + s + "'");
}

Link parse_link(const std::string& s) {
  if (s == "logit") return Link::logit;
  if (s == "log") return Link::log;
  if (s == "identity") return Link::identity;
  throw Error(errc::input, "unknown link '" + s + "'");
}

Adjustment parse_adjustment(const std::string& s) {
  if (s == "uee") return Adjustment::uee;
  if (s == "maee") return Adjustment::maee;
  throw Error(errc::input, "unknown adjustment '" + s + "'");
}

std::vector<Correction> parse_corrections(const std::string& csv_list) {
  std::vector<Correction> out;
  std::stringstream ss(csv_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "0") out.push_back(Correction::bc0);
    else if (tok == "1") out.push_back(Correction::bc1);
    else if (tok == "2") out.push_back(Correction::bc2);
    else if (tok == "3") out.push_back(Correction::bc3);
    else throw Error(errc::input, "corrections must come from {0,1,2,3}");
  }
  if (out.empty())
    throw Error(errc::input, "at least one correction is required");
  return out;
}

std::pair<int, int> parse_size_range(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw Error(errc::input, "size range must look like low:high");
  try {
    const int lo = std::stoi(s.substr(0, colon));
    const int hi = std::stoi(s.substr(colon + 1));
    return {lo, hi};
  } catch (const std::exception&) {
    throw Error(errc::input, "size range must look like low:high");
  }
}

int default_threads() {
  if (const char* env = std::getenv("SWGEE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

ordered_json matrix_json(const Eigen::MatrixXd& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

ordered_json vector_json(const Eigen::VectorXd& v) {
  ordered_json out = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

CorrelationParams build_truth(const std::string& corr, double alpha0,
                              double alpha1, double rho) {
  switch (parse_structure(corr)) {
    case Structure::independence:
      return CorrelationParams::independence();
    case Structure::exchangeable:
      return CorrelationParams::exchangeable(alpha0);
    case Structure::nested_exchangeable:
      return CorrelationParams::nested_exchangeable(alpha0, alpha1);
    case Structure::exponential_decay:
      return CorrelationParams::exponential_decay(alpha0, rho);
  }
  throw Error(errc::input, "unknown correlation structure");
}

// ---------------------------------------------------------------- fit ----

struct FitArgs {
  std::string input;
  std::string schema = "cluster-period";
  std::string link = "logit";
  std::string corr = "nested-exch";
  std::string adjust = "maee";
  std::string bc = "0,1,2,3";
  double confidence = 0.95;
  std::optional<double> fixed_rho;
  bool constrain_icc = false;
  int max_iter = 200;
  double tol = 1e-8;
  bool cic_bc0 = false;
  bool lambda_raw = false;
  bool pretty = false;
  bool stamp = false;
};

int run_fit(const FitArgs& a) {
  try {
    const std::vector<Correction> corrections = parse_corrections(a.bc);

    std::ifstream in(a.input);
    if (!in) throw Error(errc::input, "cannot open " + a.input);
    TrialData data;
    if (a.schema == "cluster-period")
      data = ingest_cluster_period(in);
    else if (a.schema == "individual")
      data = ingest_individual(in);
    else
      throw Error(errc::input,
                  "schema must be cluster-period or individual");
    const DesignInfo design = validate_design(data);

    ModelSpec spec;
    spec.link = parse_link(a.link);
    spec.structure = parse_structure(a.corr);
    spec.adjustment = parse_adjustment(a.adjust);
    spec.max_outer_iterations = a.max_iter;
    spec.tolerance = a.tol;
    spec.constrain_equal_icc = a.constrain_icc;
    spec.fixed_rho = a.fixed_rho;

    ordered_json options;
    options["input"] = a.input;
    options["schema"] = a.schema;
    options["link"] = a.link;
    options["corr"] = structure_name(spec.structure);
    options["adjust"] = adjustment_name(spec.adjustment);
    options["bc"] = a.bc;
    options["confidence"] = a.confidence;
    options["fixed_rho"] =
        a.fixed_rho ? ordered_json(*a.fixed_rho) : ordered_json();
    options["constrain_icc"] = a.constrain_icc;
    options["max_iter"] = a.max_iter;
    options["tol"] = a.tol;
    options["cic_bc0"] = a.cic_bc0;
    options["lambda_raw"] = a.lambda_raw;

    ordered_json doc;
    doc["manifest"] = make_manifest("fit", options, {a.input}, std::nullopt,
                                    a.stamp);

    const FitResult result = fit(data, spec);

    InferenceOptions iopt;
    iopt.lambda_raw_products = a.lambda_raw;

    ordered_json summary;
    summary["converged"] = result.converged;
    summary["iterations"] = result.iterations;
    summary["score_norm"] = result.score_norm;
    summary["n_clusters"] = data.n_clusters();
    summary["n_periods"] = data.n_periods();
    summary["period_labels"] = result.period_labels;
    summary["stepped_wedge"] = design.is_stepped_wedge;
    summary["structure"] = structure_name(spec.structure);
    summary["adjustment"] = adjustment_name(spec.adjustment);
    summary["link"] = link_name(spec.link);
    summary["alpha_projected"] = result.alpha_projected;
    summary["alpha_raw"] = vector_json(result.alpha_raw);
    summary["rho_boundary"] = result.rho_boundary;
    std::vector<std::string> warnings = design.warnings;
    warnings.insert(warnings.end(), result.warnings.begin(),
                    result.warnings.end());
    doc["fit"] = summary;

    const int p = result.n_mean_parameters();
    const int q = result.alpha.dim();
    const Eigen::MatrixXd mb = model_based(result);

    // Always have BC1/BC2 available for the headline standard errors.
    std::vector<Correction> wanted = corrections;
    for (Correction c : {Correction::bc1, Correction::bc2})
      if (std::find(wanted.begin(), wanted.end(), c) == wanted.end())
        wanted.push_back(c);
    std::map<Correction, Eigen::MatrixXd> joint;
    for (Correction c : wanted) joint[c] = sandwich(result, c, iopt);

    ordered_json params = ordered_json::array();
    const std::vector<std::string> names = parameter_names(result, q > 0);
    const bool have_intervals = data.n_clusters() > 2;
    ordered_json interval_block = ordered_json::object();
    if (have_intervals) {
      const IntervalReport mb_rep = intervals(result, mb, a.confidence);
      doc["dof"] = mb_rep.dof;
      doc["t_quantile"] = mb_rep.t_quantile;

      std::map<std::string, IntervalReport> by_name;
      by_name["model_based"] = mb_rep;
      for (Correction c : corrections)
        by_name[correction_name(c)] =
            intervals(result, joint.at(c), a.confidence);

      for (int k = 0; k < p + q; ++k) {
        ordered_json entry;
        entry["name"] = names[static_cast<std::size_t>(k)];
        const double est =
            k < p ? result.theta(k) : result.alpha.vec()(k - p);
        entry["estimate"] = est;
        if (spec.link == Link::logit && k < p)
          entry["odds_ratio"] = std::exp(est);
        const Correction headline =
            k < p ? Correction::bc1 : Correction::bc2;
        entry["se"] = std::sqrt(std::max(0.0, joint.at(headline)(k, k)));
        entry["se_source"] = correction_name(headline);
        ordered_json ints = ordered_json::object();
        for (const auto& [label, rep] : by_name) {
          if (k >= static_cast<int>(rep.rows.size())) continue;
          const ParamInterval& row = rep.rows[static_cast<std::size_t>(k)];
          ints[label] = {{"se", row.se},
                         {"lower", row.lower},
                         {"upper", row.upper}};
        }
        entry["intervals"] = ints;
        params.push_back(entry);
      }
    } else {
      warnings.push_back(
          "fewer than 3 clusters: t intervals are unavailable");
      for (int k = 0; k < p + q; ++k) {
        ordered_json entry;
        entry["name"] = names[static_cast<std::size_t>(k)];
        const double est =
            k < p ? result.theta(k) : result.alpha.vec()(k - p);
        entry["estimate"] = est;
        if (spec.link == Link::logit && k < p)
          entry["odds_ratio"] = std::exp(est);
        params.push_back(entry);
      }
    }
    doc["parameters"] = params;

    ordered_json cov = ordered_json::object();
    cov["model_based"] = matrix_json(mb);
    for (Correction c : corrections)
      cov[correction_name(c)] = matrix_json(joint.at(c));
    doc["covariance"] = cov;
    doc["cic_cp"] = cic_cp(result, a.cic_bc0);
    doc["fit"]["warnings"] = warnings;

    emit(doc, a.pretty);
    return result.converged ? 0 : 3;
  } catch (const Error& e) {
    return emit_error("fit", e, a.pretty);
  }
}

// ----------------------------------------------------------- simulate ----

struct SimulateArgs {
  std::string preset;
  int clusters = 12;
  int periods = 5;
  std::string corr = "ne";
  double alpha0 = 0.03;
  double alpha1 = 0.015;
  double rho = 0.5;
  double delta = std::log(0.5);
  double baseline = 0.35;
  std::string sizes = "50:150";
  int replicates = 500;
  std::optional<std::uint64_t> seed;
  std::string adjust = "maee";
  std::string bc = "0,1,2,3";
  int threads = 1;
  int max_iter = 200;
  double tol = 1e-8;
  std::string csv_out;
  bool pretty = false;
  bool stamp = false;
};

void apply_preset(SimulateArgs& a) {
  if (a.preset.empty()) return;
  if (a.preset == "bias-ne-small") {
    a.clusters = 12;
    a.corr = "ne";
    a.alpha0 = 0.03;
    a.alpha1 = 0.015;
    a.sizes = "50:150";
  } else if (a.preset == "bias-ne-large") {
    a.clusters = 24;
    a.corr = "ne";
    a.alpha0 = 0.03;
    a.alpha1 = 0.015;
    a.sizes = "50:150";
  } else if (a.preset == "bias-ed-small") {
    a.clusters = 12;
    a.corr = "ed";
    a.alpha0 = 0.1;
    a.rho = 0.5;
    a.sizes = "50:150";
  } else if (a.preset == "bias-ed-large") {
    a.clusters = 24;
    a.corr = "ed";
    a.alpha0 = 0.1;
    a.rho = 0.5;
    a.sizes = "50:150";
  } else if (a.preset == "coverage-sweep") {
    a.clusters = 24;
    a.corr = "ne";
    a.alpha0 = 0.1;
    a.alpha1 = 0.05;
    a.sizes = "25:50";
  } else {
    throw Error(errc::input, "unknown preset '" + a.preset + "'");
  }
}

int run_simulate(SimulateArgs a) {
  try {
    apply_preset(a);
    const auto [lo, hi] = parse_size_range(a.sizes);
    const SeedChoice seed = resolve_seed(a.seed);

    SimConfig config;
    config.clusters = a.clusters;
    config.periods = a.periods;
    config.delta = a.delta;
    config.baseline_prevalence = a.baseline;
    config.truth = build_truth(a.corr, a.alpha0, a.alpha1, a.rho);
    config.size_low = lo;
    config.size_high = hi;
    config.replicates = a.replicates;
    config.seed = seed.value;
    config.adjustment = parse_adjustment(a.adjust);
    config.corrections = parse_corrections(a.bc);
    config.threads = a.threads;
    config.max_outer_iterations = a.max_iter;
    config.tolerance = a.tol;

    ordered_json options;
    options["preset"] = a.preset.empty() ? ordered_json() : ordered_json(a.preset);
    options["clusters"] = config.clusters;
    options["periods"] = config.periods;
    options["corr"] = structure_name(config.truth.tag);
    options["alpha0"] = config.truth.alpha0;
    if (config.truth.tag == Structure::nested_exchangeable)
      options["alpha1"] = config.truth.alpha1;
    if (config.truth.tag == Structure::exponential_decay)
      options["rho"] = config.truth.rho;
    options["delta"] = config.delta;
    options["baseline"] = config.baseline_prevalence;
    options["sizes"] = a.sizes;
    options["replicates"] = config.replicates;
    options["adjust"] = adjustment_name(config.adjustment);
    options["bc"] = a.bc;
    options["max_iter"] = a.max_iter;
    options["tol"] = a.tol;

    ordered_json doc;
    doc["manifest"] =
        make_manifest("simulate", options, {}, seed, a.stamp);

    const ExperimentReport report = run_experiment(config);

    ordered_json rep;
    rep["replicates_requested"] = report.replicates_requested;
    rep["replicates_used"] = report.replicates_used;
    rep["non_converged"] = report.non_converged;
    rep["infeasible"] = report.infeasible;
    rep["unreliable"] = report.unreliable;
    rep["coverage_adjustment"] =
        adjustment_name(report.coverage_adjustment);
    rep["parameter_names"] = report.parameter_names;
    rep["truth"] = vector_json(report.truth);
    rep["bias_percent"] = {{"uee", vector_json(report.bias_uee)},
                           {"maee", vector_json(report.bias_maee)}};
    ordered_json cov = ordered_json::object();
    cov["model_based"] = vector_json(report.coverage.at("model_based"));
    for (Correction c : config.corrections)
      cov[correction_name(c)] =
          vector_json(report.coverage.at(correction_name(c)));
    rep["coverage"] = cov;
    rep["max_alpha_equation_residual"] =
        report.max_alpha_equation_residual;
    doc["report"] = rep;

    if (!a.csv_out.empty()) {
      std::ofstream out(a.csv_out);
      if (!out) throw Error(errc::input, "cannot write " + a.csv_out);
      out << "replicate,adjustment";
      for (const std::string& n : report.parameter_names) out << ',' << n;
      out << '\n';
      for (int r = 0; r < report.replicates_used; ++r) {
        for (const char* adj : {"UEE", "MAEE"}) {
          out << report.used_replicates[static_cast<std::size_t>(r)] << ','
              << adj;
          const Eigen::MatrixXd& est = adj == std::string("UEE")
                                           ? report.estimates_uee
                                           : report.estimates_maee;
          for (int pcol = 0; pcol < est.cols(); ++pcol)
            out << ',' << est(r, pcol);
          out << '\n';
        }
      }
    }

    emit(doc, a.pretty);
    return 0;
  } catch (const Error& e) {
    return emit_error("simulate", e, a.pretty);
  }
}

// ---------------------------------------------------------------- are ----

struct AreArgs {
  std::vector<std::string> design;  // {"staircase", I, J} or {csv path}
  std::string corr = "ne";
  double alpha0 = 0.1;
  double alpha1 = 0.1;
  double rho = 0.5;
  double delta = std::log(0.75);
  double prev_start = 0.25;
  double prev_end = 0.20;
  std::string sizes = "50:150";
  int replicates = 1000;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool pretty = false;
  bool stamp = false;
};

Eigen::MatrixXi load_design_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::input, "cannot open " + path);
  std::vector<std::vector<int>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ','))
      row.push_back(static_cast<int>(csv::parse_int(tok, "design cell")));
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(errc::schema, "ragged design CSV");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(errc::schema, "empty design CSV");
  Eigen::MatrixXi design(static_cast<int>(rows.size()),
                         static_cast<int>(rows.front().size()));
  for (int i = 0; i < design.rows(); ++i)
    for (int j = 0; j < design.cols(); ++j)
      design(i, j) = rows[static_cast<std::size_t>(i)]
                         [static_cast<std::size_t>(j)];
  return design;
}

int run_are(const AreArgs& a) {
  try {
    Eigen::MatrixXi design;
    std::vector<std::string> inputs;
    if (a.design.empty())
      throw Error(errc::input, "--design is required");
    if (a.design.front() == "staircase") {
      if (a.design.size() != 3)
        throw Error(errc::input, "--design staircase needs I and J");
      design = staircase_design(
          static_cast<int>(csv::parse_int(a.design[1], "clusters")),
          static_cast<int>(csv::parse_int(a.design[2], "periods")));
    } else if (a.design.size() == 1) {
      design = load_design_csv(a.design.front());
      inputs.push_back(a.design.front());
    } else {
      throw Error(errc::input,
                  "--design takes 'staircase I J' or one CSV path");
    }

    const auto [lo, hi] = parse_size_range(a.sizes);
    const SeedChoice seed = resolve_seed(a.seed);

    AreConfig config;
    config.design = design;
    config.beta = default_period_trend(static_cast<int>(design.cols()),
                                       a.prev_start, a.prev_end);
    config.delta = a.delta;
    config.truth = build_truth(a.corr, a.alpha0, a.alpha1, a.rho);
    config.sizes = SizeSampler::discrete_uniform(lo, hi);
    config.replicates = a.replicates;
    config.seed = seed.value;
    config.threads = a.threads;

    ordered_json options;
    options["design"] = a.design;
    options["corr"] = structure_name(config.truth.tag);
    options["alpha0"] = config.truth.alpha0;
    if (config.truth.tag == Structure::nested_exchangeable)
      options["alpha1"] = config.truth.alpha1;
    if (config.truth.tag == Structure::exponential_decay)
      options["rho"] = config.truth.rho;
    options["delta"] = config.delta;
    options["prevalence"] = {a.prev_start, a.prev_end};
    options["sizes"] = a.sizes;
    options["replicates"] = config.replicates;

    ordered_json doc;
    doc["manifest"] = make_manifest("are", options, inputs, seed, a.stamp);

    const AreReport report = are_estimate(config);
    ordered_json rep;
    rep["replicates"] = report.replicates;
    rep["mean"] = report.mean;
    rep["mc_se"] = report.mc_se;
    ordered_json quants = ordered_json::object();
    for (const auto& [prob, value] : report.quantiles) {
      std::ostringstream key;
      key << prob;
      quants[key.str()] = value;
    }
    rep["quantiles"] = quants;
    doc["report"] = rep;

    emit(doc, a.pretty);
    return 0;
  } catch (const Error& e) {
    return emit_error("are", e, a.pretty);
  }
}

// ------------------------------------------------------- oracle-check ----

struct OracleArgs {
  int trials = 100;
  std::string structure;  // empty = alternate NE/ED
  std::optional<std::uint64_t> seed;
  bool corrupt = false;
  bool pretty = false;
  bool stamp = false;
};

int run_oracle_check(const OracleArgs& a) {
  try {
    std::optional<Structure> structure;
    if (!a.structure.empty()) structure = parse_structure(a.structure);
    const SeedChoice seed = resolve_seed(a.seed);

    ordered_json options;
    options["trials"] = a.trials;
    options["structure"] =
        a.structure.empty() ? ordered_json() : ordered_json(a.structure);
    options["corrupt"] = a.corrupt;

    ordered_json doc;
    doc["manifest"] =
        make_manifest("oracle-check", options, {}, seed, a.stamp);

    const OracleReport report =
        score_compression_suite(a.trials, structure, seed.value, a.corrupt);
    doc["report"] = {{"trials", report.trials},
                     {"max_score_gap", report.max_score_gap},
                     {"max_info_gap", report.max_info_gap},
                     {"pass", report.pass},
                     {"worst_case", report.worst_case}};
    emit(doc, a.pretty);
    return report.pass ? 0 : 1;
  } catch (const Error& e) {
    return emit_error("oracle-check", e, a.pretty);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal models for stepped-wedge trials with binary "
               "outcomes: GEE fitting, bias-corrected inference, relative "
               "efficiency, and a simulation lab"};
  app.require_subcommand(1);
  const int threads_default = default_threads();

  FitArgs fit_args;
  CLI::App* fit_cmd =
      app.add_subcommand("fit", "Fit a marginal model to trial data");
  fit_cmd->add_option("--input", fit_args.input, "CSV input file")
      ->required();
  fit_cmd->add_option("--schema", fit_args.schema,
                      "cluster-period or individual");
  fit_cmd->add_option("--link", fit_args.link, "logit, log, or identity");
  fit_cmd->add_option("--corr", fit_args.corr,
                      "ind, exch, nested-exch, or exp-decay");
  fit_cmd->add_option("--adjust", fit_args.adjust, "uee or maee");
  fit_cmd->add_option("--bc", fit_args.bc,
                      "comma-separated corrections from {0,1,2,3}");
  fit_cmd->add_option("--conf", fit_args.confidence, "confidence level");
  double fixed_rho_value = 0.0;
  CLI::Option* fixed_rho_opt = fit_cmd->add_option(
      "--fixed-rho", fixed_rho_value, "hold the decay parameter fixed");
  fit_cmd->add_flag("--constrain-icc", fit_args.constrain_icc,
                    "force equal within/between ICCs");
  fit_cmd->add_option("--max-iter", fit_args.max_iter, "outer iteration cap");
  fit_cmd->add_option("--tol", fit_args.tol, "convergence tolerance");
  fit_cmd->add_flag("--cic-bc0", fit_args.cic_bc0,
                    "use the uncorrected meat in the information criterion");
  fit_cmd->add_flag("--lambda-raw", fit_args.lambda_raw,
                    "use raw residual products in the sandwich meat");
  fit_cmd->add_flag("--pretty", fit_args.pretty, "indent the JSON output");
  fit_cmd->add_flag("--stamp", fit_args.stamp, "record a wall-clock stamp");

  SimulateArgs sim_args;
  sim_args.threads = threads_default;
  std::uint64_t sim_seed_value = 0;
  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "Run a bias/coverage simulation experiment");
  sim_cmd->add_option("--preset", sim_args.preset,
                      "bias-ne-small, bias-ne-large, bias-ed-small, "
                      "bias-ed-large, or coverage-sweep");
  sim_cmd->add_option("-I,--clusters", sim_args.clusters, "cluster count");
  sim_cmd->add_option("-J,--periods", sim_args.periods, "period count");
  sim_cmd->add_option("--corr", sim_args.corr, "true structure");
  sim_cmd->add_option("--alpha0", sim_args.alpha0, "true within-period ICC");
  sim_cmd->add_option("--alpha1", sim_args.alpha1, "true between-period ICC");
  sim_cmd->add_option("--rho", sim_args.rho, "true decay parameter");
  sim_cmd->add_option("--delta", sim_args.delta,
                      "true treatment effect on the link scale");
  sim_cmd->add_option("--baseline", sim_args.baseline,
                      "baseline prevalence");
  sim_cmd->add_option("--sizes", sim_args.sizes, "size range low:high");
  sim_cmd->add_option("--replicates", sim_args.replicates,
                      "number of replicates");
  CLI::Option* sim_seed_opt =
      sim_cmd->add_option("--seed", sim_seed_value, "master seed");
  sim_cmd->add_option("--adjust", sim_args.adjust,
                      "fit scored for coverage: uee or maee");
  sim_cmd->add_option("--bc", sim_args.bc, "corrections to evaluate");
  sim_cmd->add_option("--threads", sim_args.threads, "worker threads");
  sim_cmd->add_option("--max-iter", sim_args.max_iter,
                      "outer iteration cap per fit");
  sim_cmd->add_option("--tol", sim_args.tol, "fit tolerance");
  sim_cmd->add_option("--csv", sim_args.csv_out,
                      "write per-replicate estimates to this CSV");
  sim_cmd->add_flag("--pretty", sim_args.pretty, "indent the JSON output");
  sim_cmd->add_flag("--stamp", sim_args.stamp, "record a wall-clock stamp");

  AreArgs are_args;
  are_args.threads = threads_default;
  std::uint64_t are_seed_value = 0;
  CLI::App* are_cmd = app.add_subcommand(
      "are", "Relative efficiency of modeled correlation vs independence");
  are_cmd->add_option("--design", are_args.design,
                      "'staircase I J' or a 0/1 design CSV")
      ->expected(1, 3);
  are_cmd->add_option("--corr", are_args.corr, "true structure");
  are_cmd->add_option("--alpha0", are_args.alpha0, "true within-period ICC");
  are_cmd->add_option("--alpha1", are_args.alpha1, "true between-period ICC");
  are_cmd->add_option("--rho", are_args.rho, "true decay parameter");
  are_cmd->add_option("--delta", are_args.delta,
                      "treatment effect on the link scale");
  are_cmd->add_option("--prev-start", are_args.prev_start,
                      "first-period prevalence");
  are_cmd->add_option("--prev-end", are_args.prev_end,
                      "last-period prevalence");
  are_cmd->add_option("--sizes", are_args.sizes, "size range low:high");
  are_cmd->add_option("-K,--replicates", are_args.replicates,
                      "bootstrap replicates");
  CLI::Option* are_seed_opt =
      are_cmd->add_option("--seed", are_seed_value, "master seed");
  are_cmd->add_option("--threads", are_args.threads, "worker threads");
  are_cmd->add_flag("--pretty", are_args.pretty, "indent the JSON output");
  are_cmd->add_flag("--stamp", are_args.stamp, "record a wall-clock stamp");

  OracleArgs oracle_args;
  std::uint64_t oracle_seed_value = 0;
  CLI::App* oracle_cmd = app.add_subcommand(
      "oracle-check",
      "Verify the cluster-period score against the individual-level score");
  oracle_cmd->add_option("--trials", oracle_args.trials,
                         "number of random instances");
  oracle_cmd->add_option("--structure", oracle_args.structure,
                         "restrict to one structure");
  CLI::Option* oracle_seed_opt =
      oracle_cmd->add_option("--seed", oracle_seed_value, "master seed");
  oracle_cmd->add_flag("--corrupt", oracle_args.corrupt,
                       "deliberately break one covariance entry");
  oracle_cmd->add_flag("--pretty", oracle_args.pretty,
                       "indent the JSON output");
  oracle_cmd->add_flag("--stamp", oracle_args.stamp,
                       "record a wall-clock stamp");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (fit_cmd->parsed()) {
    if (fixed_rho_opt->count() > 0) fit_args.fixed_rho = fixed_rho_value;
    return run_fit(fit_args);
  }
  if (sim_cmd->parsed()) {
    if (sim_seed_opt->count() > 0) sim_args.seed = sim_seed_value;
    return run_simulate(sim_args);
  }
  if (are_cmd->parsed()) {
    if (are_seed_opt->count() > 0) are_args.seed = are_seed_value;
    return run_are(are_args);
  }
  if (oracle_cmd->parsed()) {
    if (oracle_seed_opt->count() > 0) oracle_args.seed = oracle_seed_value;
    return run_oracle_check(oracle_args);
  }
  return 2;
}
