// compop: design validation, critical values, sample size planning, analysis,
// blinded sample size re-calculation and simulation grids.

#include <omp.h>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "compop/error.hpp"
#include "compop/io.hpp"
#include "compop/planning.hpp"
#include "compop/recalc.hpp"
#include "compop/simulate.hpp"

namespace {

using namespace compop;

constexpr int kExitOther = 1;
constexpr int kExitParse = 2;
constexpr int kExitValidation = 3;
constexpr int kExitNumeric = 4;

struct Options {
  std::string design;
  std::string assumptions;
  std::string data;
  std::string scenarios;
  std::optional<double> alpha;
  std::optional<double> power;
  std::optional<double> nu;
  std::optional<std::string> rule;
  std::optional<std::int64_t> runs;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;
  // samplesize
  std::string curve;
  std::int64_t curve_max = 0;
  std::int64_t curve_step = 0;
  // recalc
  std::optional<std::int64_t> n0;
  bool reestimate_prevalence = false;
  // simulate
  std::string per_run;
};

std::uint64_t resolve_seed(const Options& o, std::uint64_t fallback_if_absent, bool random_if_absent) {
  if (o.seed) return *o.seed;
  if (!random_if_absent) return fallback_if_absent;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

DesignSpec load_design(const Options& o) {
  Json j = read_json_file(o.design);
  if (o.alpha) j["alpha"] = *o.alpha;
  if (o.power) j["target_power"] = *o.power;
  return design_from_json(j);
}

std::string matrix_text(const Eigen::MatrixXd& m, const std::string& indent) {
  std::ostringstream s;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    s << indent;
    for (Eigen::Index k = 0; k < m.cols(); ++k) s << (k ? "  " : "") << format_sig(m(i, k));
    s << '\n';
  }
  return s.str();
}

std::string allocation_text(const DesignSpec& spec, const std::vector<ArmCounts>& cells) {
  std::ostringstream s;
  for (std::size_t j = 0; j < cells.size(); ++j)
    s << "  " << spec.subsets[j].label << ": treated " << cells[j].treated << ", control " << cells[j].control
      << '\n';
  return s.str();
}

Json allocation_json(const DesignSpec& spec, const std::vector<ArmCounts>& cells) {
  Json a = Json::object();
  for (std::size_t j = 0; j < cells.size(); ++j)
    a[spec.subsets[j].label] = Json{{"treated", cells[j].treated}, {"control", cells[j].control}};
  return a;
}

// Writes the JSON artifact to --out, or to stdout after the text when absent.
void emit(const Options& o, const std::string& text, const Json& artifact) {
  std::cout << text;
  if (!o.out.empty()) write_text(o.out, artifact.dump(2) + "\n");
}

int cmd_validate(const Options& o) {
  if (o.design.empty() && o.scenarios.empty()) throw ParseError("validate needs --design or --scenarios");
  Json artifact{{"command", "validate"}};
  std::ostringstream text;
  if (!o.design.empty()) {
    const DesignSpec spec = load_design(o);
    artifact["design"] = to_json(spec);
    text << "design ok: " << spec.n_subsets() << " subsets, " << spec.n_composites() << " composites\n";
    if (!o.assumptions.empty()) {
      const SubsetAssumptions a = assumptions_from_json(read_json_file(o.assumptions), spec);
      artifact["assumptions"] = assumptions_to_json(spec, a);
      text << "assumptions ok\n";
    }
  }
  if (!o.scenarios.empty()) {
    const auto scenarios = scenarios_from_json(read_json_file(o.scenarios));
    Json list = Json::array();
    for (const auto& s : scenarios) {
      const std::int64_t floor = sample_size_floor(s.design);
      list.push_back(to_json(s));
      text << "scenario '" << s.name << "' ok (size floor " << floor << ")\n";
    }
    artifact["scenarios"] = list;
  }
  emit(o, text.str(), artifact);
  return 0;
}

int cmd_critical_value(const Options& o) {
  const DesignSpec spec = load_design(o);
  MvnSettings mvn;
  if (o.seed) mvn.rng_seed = *o.seed;
  const ClosedTestPlan plan(spec, mvn);
  const std::uint32_t full = (1U << spec.n_composites()) - 1;
  const double c = plan.critical_value(full);

  std::ostringstream text;
  text << "c_G = " << format_sig(c) << '\n' << "Sigma_0 =\n" << matrix_text(plan.null_correlation().matrix(), "  ");
  Json artifact{{"command", "critical-value"},
                {"config", Json{{"design", to_json(spec)}, {"mvn_seed", mvn.rng_seed}}},
                {"critical_value", c},
                {"sigma_0", to_json(plan.null_correlation())}};
  if (spec.n_composites() <= ClosedTestPlan::kEagerCompositeLimit) {
    Json per = Json::array();
    for (std::uint32_t m = 1; m <= full; ++m) {
      Json members = Json::array();
      for (std::size_t r = 0; r < spec.n_composites(); ++r)
        if (m & (1U << r)) members.push_back(r + 1);
      per.push_back(Json{{"composites", members}, {"critical_value", plan.critical_value(m)}});
    }
    artifact["intersections"] = per;
  }
  emit(o, text.str(), artifact);
  return 0;
}

int cmd_samplesize(const Options& o) {
  const DesignSpec spec = load_design(o);
  const SubsetAssumptions assume = assumptions_from_json(read_json_file(o.assumptions), spec);
  PlanningSettings settings;
  settings.sigma_a.seed = resolve_seed(o, 0, true);
  settings.mvn.rng_seed = settings.sigma_a.seed;
  if (o.runs) settings.sigma_a.runs = *o.runs;
  settings.sigma_a.validate();

  const SampleSizePlan plan = plan_sample_size(spec, assume, settings);
  const auto& r = plan.result;

  std::ostringstream text;
  text << "N0 = " << r.n << '\n'
       << "power = " << format_sig(r.power) << '\n'
       << "c_G = " << format_sig(r.critical_value) << '\n'
       << "seed = " << settings.sigma_a.seed << '\n'
       << "allocation:\n"
       << allocation_text(spec, plan.allocation) << "Sigma_0 =\n"
       << matrix_text(plan.sigma_0.matrix(), "  ") << "Sigma_A =\n"
       << matrix_text(plan.sigma_a.correlation.matrix(), "  ");

  Json artifact{{"command", "samplesize"},
                {"config",
                 Json{{"design", to_json(spec)},
                      {"assumptions", assumptions_to_json(spec, assume)},
                      {"sigma_a", to_json(settings.sigma_a)},
                      {"mvn_seed", settings.mvn.rng_seed},
                      {"imbalance", "expected"}}},
                {"n0", r.n},
                {"power", r.power},
                {"critical_value", r.critical_value},
                {"floor", r.floor},
                {"mean_shift", r.mean_shift},
                {"allocation", allocation_json(spec, plan.allocation)},
                {"sigma_0", to_json(plan.sigma_0)},
                {"sigma_a", to_json(plan.sigma_a.correlation)},
                {"sigma_a_repair", plan.sigma_a.repair}};

  if (!o.curve.empty()) {
    const std::int64_t hi = o.curve_max > 0 ? o.curve_max : 2 * r.n;
    const std::int64_t step = o.curve_step > 0 ? o.curve_step : std::max<std::int64_t>(1, r.n / 100);
    std::ostringstream csv;
    csv << "# config " << artifact["config"].dump() << '\n' << "n,power\n";
    for (std::int64_t n = r.floor; n <= hi; n += step)
      csv << n << ',' << format_full(disjunctive_power(spec, plan.alternative, n, settings.mvn).power) << '\n';
    write_text(o.curve, csv.str());
  }
  emit(o, text.str(), artifact);
  return 0;
}

int cmd_analyze(const Options& o) {
  const DesignSpec spec = load_design(o);
  const auto records = read_dataset_csv_file(o.data, spec.n_covariates);
  const auto samples = group_by_subset(spec, records);
  MvnSettings mvn;
  if (o.seed) mvn.rng_seed = *o.seed;
  const ClosedTestPlan plan(spec, mvn);
  const Analysis a = analyze(spec, samples, plan);

  std::ostringstream text;
  for (std::size_t j = 0; j < a.fits.size(); ++j) {
    const auto& f = a.fits[j];
    text << spec.subsets[j].label << ": effect " << format_sig(f.effect) << ", se " << format_sig(std::sqrt(f.variance))
         << ", t " << format_sig(f.t) << ", df " << f.df << ", p " << format_sig(f.p) << '\n';
  }
  for (std::size_t r = 0; r < spec.n_composites(); ++r)
    text << "composite " << r + 1 << ": z " << format_sig(a.composite_z[r]) << ", "
         << (a.report.elementary_rejected[r] ? "rejected" : "not rejected") << '\n';
  if (a.p_underflow) text << "note: some p-values fell below 1e-15; scores use the exact log tail\n";

  Json artifact{{"command", "analyze"},
                {"config", Json{{"design", to_json(spec)}, {"data", o.data}, {"mvn_seed", mvn.rng_seed}}},
                {"analysis", to_json(a, spec)}};
  emit(o, text.str(), artifact);
  return 0;
}

int cmd_recalc(const Options& o) {
  const DesignSpec spec = load_design(o);
  const SubsetAssumptions assume = assumptions_from_json(read_json_file(o.assumptions), spec);
  const Rule rule = o.rule ? parse_rule(*o.rule) : Rule::kUnrestricted;
  if (!o.nu) throw ParseError("recalc needs --nu");
  PlanningSettings settings;
  settings.sigma_a.seed = resolve_seed(o, 0, true);
  settings.mvn.rng_seed = settings.sigma_a.seed;
  if (o.runs) settings.sigma_a.runs = *o.runs;
  settings.sigma_a.validate();

  const std::int64_t n0 = o.n0 ? *o.n0 : plan_sample_size(spec, assume, settings).result.n;
  const std::int64_t n1_planned = pilot_size(spec, n0, *o.nu);

  const auto records = read_dataset_csv_file(o.data, spec.n_covariates);
  for (const auto& r : records)
    if (r.arm) throw ValidationError("interim data must be blinded: the arm column has to be absent or empty");
  const auto blinded = group_blinded(spec, records);
  const BlindedEstimates est = blinded_fit(blinded);
  const auto n1 = static_cast<std::int64_t>(records.size());

  RecalcSettings rs;
  rs.planning = settings;
  rs.planning.sigma_a.route = SigmaARoute::kSufficientStatistic;
  rs.reestimate_prevalence = o.reestimate_prevalence;
  std::vector<double> effects;
  for (const auto& a : assume) effects.push_back(a.effect);
  const RecalcResult re = recalculate(spec, effects, est, rs);
  const std::int64_t n_final = final_size(rule, n0, n1, re.n_reest);

  std::ostringstream text;
  text << "N0 = " << n0 << '\n'
       << "N1 = " << n1 << " (planned " << n1_planned << ")\n"
       << "N_reest = " << re.n_reest << '\n'
       << "N_final = " << n_final << " (" << to_string(rule) << ")\n"
       << "seed = " << settings.sigma_a.seed << '\n';
  for (std::size_t j = 0; j < est.subsets.size(); ++j)
    text << "  " << spec.subsets[j].label << ": n " << est.subsets[j].n << ", residual variance "
         << format_sig(est.subsets[j].residual_variance) << ", R^2 " << format_sig(est.subsets[j].r_squared) << '\n';

  Json estimates = Json::object();
  for (std::size_t j = 0; j < est.subsets.size(); ++j) {
    const auto& e = est.subsets[j];
    estimates[spec.subsets[j].label] = Json{{"n", e.n},
                                            {"residual_variance", e.residual_variance},
                                            {"r_squared", e.r_squared},
                                            {"outcome_variance", e.outcome_variance}};
  }
  const std::int64_t floor = sample_size_floor(spec);
  Json artifact{
      {"command", "recalc"},
      {"config",
       Json{{"design", to_json(spec)},
            {"assumptions", assumptions_to_json(spec, assume)},
            {"data", o.data},
            {"nu", *o.nu},
            {"rule", to_string(rule)},
            {"n0_given", o.n0.has_value()},
            {"sigma_a", to_json(rs.planning.sigma_a)},
            {"mvn_seed", settings.mvn.rng_seed},
            {"reestimate_prevalence", o.reestimate_prevalence}}},
      {"n0", n0},
      {"n1", n1},
      {"n1_planned", n1_planned},
      {"blinded_estimates", estimates},
      {"prevalences", re.prevalences},
      {"sigma_a", to_json(re.sigma_a)},
      {"n_reest", re.n_reest},
      {"power_at_n_reest", re.power.power},
      {"floors", Json{{"size_floor", floor}, {"search_floor", re.power.floor}}},
      {"rule_trace",
       Json{{"rule", to_string(rule)},
            {"formula", rule == Rule::kRestricted ? "max(N0, N_reest)" : "max(N1, N_reest)"},
            {"n_final", n_final}}},
      {"n_final", n_final}};
  emit(o, text.str(), artifact);
  return 0;
}

int cmd_simulate(const Options& o) {
  std::vector<ScenarioConfig> scenarios = scenarios_from_json(read_json_file(o.scenarios));
  for (auto& s : scenarios) {
    if (o.runs) s.runs = *o.runs;
    if (o.seed) s.seed = *o.seed;
    if (o.nu) s.nu = *o.nu;
    if (o.rule) s.rule = parse_rule(*o.rule);
    if (o.alpha) s.design.alpha = *o.alpha;
    if (o.power) s.design.target_power = *o.power;
    s.design = validate(std::move(s.design));
    s.validate();
  }
  GridSettings grid;
  grid.workers = o.workers;
  grid.keep_outcomes = !o.per_run.empty();
  const std::vector<ScenarioResult> results = run_grid(scenarios, grid);

  Json config = Json::array();
  for (const auto& s : scenarios) config.push_back(to_json(s));
  std::ostringstream csv;
  write_summary_csv(csv, results, config);
  if (!o.out.empty()) write_text(o.out, csv.str());
  if (!o.per_run.empty()) {
    std::ostringstream runs;
    write_runs_csv(runs, results, config);
    write_text(o.per_run, runs.str());
  }

  for (const auto& r : results) {
    if (!r.summary) {
      std::cout << r.name << ": error: " << r.error << '\n';
      continue;
    }
    const auto& s = *r.summary;
    std::cout << r.name << ": runs " << s.runs << ", N0 " << s.n0;
    if (s.n1) std::cout << ", N1 " << s.n1 << ", mean N_final " << format_sig(s.n_final_mean) << " [q10 "
                        << format_sig(s.n_final_q10) << ", q90 " << format_sig(s.n_final_q90) << "]";
    if (s.fwer) std::cout << ", FWER " << format_sig(s.fwer->estimate) << " (se " << format_sig(s.fwer->se) << ")";
    if (s.power) std::cout << ", power " << format_sig(s.power->estimate) << " (se " << format_sig(s.power->se) << ")";
    if (s.failed_runs) std::cout << ", failed runs " << s.failed_runs;
    std::cout << '\n';
  }
  return 0;
}

void report_error(const char* kind, const std::string& message, const std::vector<std::string>& violations = {}) {
  Json e{{"error", Json{{"kind", kind}, {"message", message}}}};
  if (!violations.empty()) e["error"]["violations"] = violations;
  std::cerr << e.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample size planning, analysis and simulation for trials testing composite populations"};
  app.require_subcommand(1);
  Options o;

  auto design = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--design", o.design, "design JSON")->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  auto assumptions = [&](CLI::App* c, bool required) {
    auto* opt = c->add_option("--assumptions", o.assumptions, "planning assumptions JSON")->check(CLI::ExistingFile);
    if (required) opt->required();
  };
  auto common = [&](CLI::App* c) {
    c->add_option("--alpha", o.alpha, "one-sided significance level override");
    c->add_option("--power", o.power, "target disjunctive power override");
    c->add_option("--seed", o.seed, "random seed (drawn and recorded when omitted)");
    c->add_option("--workers", o.workers, "OpenMP threads")->check(CLI::PositiveNumber);
    c->add_option("--out", o.out, "output file ('-' for stdout)");
  };

  auto* validate_cmd = app.add_subcommand("validate", "check design, assumption and scenario files");
  design(validate_cmd, false);
  assumptions(validate_cmd, false);
  validate_cmd->add_option("--scenarios", o.scenarios, "scenario grid JSON")->check(CLI::ExistingFile);
  common(validate_cmd);

  auto* cv_cmd = app.add_subcommand("critical-value", "common critical value of the global intersection");
  design(cv_cmd, true);
  common(cv_cmd);

  auto* ss_cmd = app.add_subcommand("samplesize", "smallest total size reaching the target disjunctive power");
  design(ss_cmd, true);
  assumptions(ss_cmd, true);
  common(ss_cmd);
  ss_cmd->add_option("--runs", o.runs, "simulated trials for the alternative correlation");
  ss_cmd->add_option("--curve", o.curve, "write a power-vs-n CSV here");
  ss_cmd->add_option("--curve-max", o.curve_max, "largest n on the curve (default 2*N0)");
  ss_cmd->add_option("--curve-step", o.curve_step, "n increment on the curve");

  auto* an_cmd = app.add_subcommand("analyze", "fit, combine and closed-test a trial dataset");
  design(an_cmd, true);
  an_cmd->add_option("--data", o.data, "dataset CSV")->required()->check(CLI::ExistingFile);
  common(an_cmd);

  auto* re_cmd = app.add_subcommand("recalc", "blinded sample size re-calculation from internal pilot data");
  design(re_cmd, true);
  assumptions(re_cmd, true);
  re_cmd->add_option("--data", o.data, "blinded interim CSV (no arm column)")->required()->check(CLI::ExistingFile);
  re_cmd->add_option("--n0", o.n0, "initially planned size (planned from the assumptions when omitted)");
  re_cmd->add_option("--nu", o.nu, "internal pilot fraction")->required();
  re_cmd->add_option("--rule", o.rule, "restricted|unrestricted")
      ->check(CLI::IsMember({"restricted", "unrestricted"}));
  re_cmd->add_option("--runs", o.runs, "simulated trials for the alternative correlation");
  re_cmd->add_flag("--reestimate-prevalence", o.reestimate_prevalence, "use the observed subset shares");
  common(re_cmd);

  auto* sim_cmd = app.add_subcommand("simulate", "run a scenario grid; --out receives the summary CSV");
  sim_cmd->add_option("--scenarios", o.scenarios, "scenario grid JSON")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--runs", o.runs, "runs per scenario override");
  sim_cmd->add_option("--nu", o.nu, "internal pilot fraction override");
  sim_cmd->add_option("--rule", o.rule, "restricted|unrestricted override")
      ->check(CLI::IsMember({"restricted", "unrestricted"}));
  sim_cmd->add_option("--per-run", o.per_run, "write one CSV row per simulated trial here");
  common(sim_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("parse", e.what());
    return kExitParse;
  }

  omp_set_num_threads(o.workers);
  try {
    if (*validate_cmd) return cmd_validate(o);
    if (*cv_cmd) return cmd_critical_value(o);
    if (*ss_cmd) return cmd_samplesize(o);
    if (*an_cmd) return cmd_analyze(o);
    if (*re_cmd) return cmd_recalc(o);
    if (*sim_cmd) return cmd_simulate(o);
  } catch (const ParseError& e) {
    report_error(e.kind(), e.what());
    return kExitParse;
  } catch (const ValidationError& e) {
    report_error(e.kind(), e.what(), e.violations());
    return kExitValidation;
  } catch (const NumericError& e) {
    report_error(e.kind(), e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    report_error("error", e.what());
    return kExitOther;
  }
  return kExitOther;
}
