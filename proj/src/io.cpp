#include "compop/io.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "compop/error.hpp"

namespace compop {

namespace {

const Json& require(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  return j.at(key);
}

double as_number(const Json& v, const std::string& what) {
  if (!v.is_number()) throw ParseError(what + " must be a number");
  return v.get<double>();
}

std::int64_t as_integer(const Json& v, const std::string& what) {
  if (!v.is_number_integer()) throw ParseError(what + " must be an integer");
  return v.get<std::int64_t>();
}

std::uint64_t as_seed(const Json& v, const std::string& what) {
  if (!v.is_number_integer()) throw ParseError(what + " must be an integer");
  return v.is_number_unsigned() ? v.get<std::uint64_t>() : static_cast<std::uint64_t>(v.get<std::int64_t>());
}

std::string as_string(const Json& v, const std::string& what) {
  if (!v.is_string()) throw ParseError(what + " must be a string");
  return v.get<std::string>();
}

bool as_bool(const Json& v, const std::string& what) {
  if (!v.is_boolean()) throw ParseError(what + " must be true or false");
  return v.get<bool>();
}

double number_or(const Json& j, const char* key, double fallback, const std::string& where) {
  return j.contains(key) ? as_number(j.at(key), where + "." + key) : fallback;
}

std::size_t label_index(const DesignSpec& spec, const std::string& label) {
  for (std::size_t i = 0; i < spec.n_subsets(); ++i)
    if (spec.subsets[i].label == label) return i;
  throw ValidationError("unknown subset label '" + label + "'");
}

// {"effect", "variance", "rho" | "rho_squared"}
SubsetAssumption subset_params_from_json(const Json& v, const std::string& where) {
  if (!v.is_object()) throw ParseError(where + " must be an object");
  SubsetAssumption a;
  a.effect = as_number(require(v, "effect", where), where + ".effect");
  a.variance = number_or(v, "variance", 1.0, where);
  if (v.contains("rho") && v.contains("rho_squared"))
    throw ParseError(where + ": give either 'rho' or 'rho_squared', not both");
  if (v.contains("rho")) {
    const double rho = as_number(v.at("rho"), where + ".rho");
    if (!(rho > -1.0 && rho < 1.0)) throw ValidationError(where + ": rho must lie in (-1, 1)");
    a.rho_squared = rho * rho;
  } else {
    a.rho_squared = number_or(v, "rho_squared", 0.0, where);
  }
  return a;
}

SubsetAssumptions per_subset_from_json(const Json& j, const DesignSpec& spec, const std::string& where) {
  const Json& body = j.is_object() && j.contains("subsets") ? j.at("subsets") : j;
  if (!body.is_object()) throw ParseError(where + " must be an object keyed by subset label");
  SubsetAssumptions out(spec.n_subsets());
  std::vector<bool> seen(spec.n_subsets(), false);
  for (const auto& [label, v] : body.items()) {
    const std::size_t i = label_index(spec, label);
    out[i] = subset_params_from_json(v, where + "." + label);
    seen[i] = true;
  }
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) missing.push_back(where + ": no entry for subset '" + spec.subsets[i].label + "'");
  if (!missing.empty()) throw ValidationError(missing);
  return out;
}

MvnSettings mvn_from_json(const Json& j, MvnSettings base) {
  if (!j.is_object()) throw ParseError("mvn settings must be an object");
  base.abs_tolerance = number_or(j, "abs_tolerance", base.abs_tolerance, "mvn");
  if (j.contains("max_evaluations")) base.max_evaluations = as_integer(j.at("max_evaluations"), "mvn.max_evaluations");
  if (j.contains("seed")) base.rng_seed = as_seed(j.at("seed"), "mvn.seed");
  base.validate();
  return base;
}

ImbalanceTerm parse_imbalance(const std::string& s) {
  if (s == "expected") return ImbalanceTerm::kExpected;
  if (s == "ignored") return ImbalanceTerm::kIgnored;
  throw ValidationError("imbalance must be 'expected' or 'ignored', got '" + s + "'");
}

const char* to_string(ImbalanceTerm t) { return t == ImbalanceTerm::kExpected ? "expected" : "ignored"; }

const char* to_string(SigmaARoute r) { return r == SigmaARoute::kSubjectLevel ? "subject" : "sufficient"; }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  if (s.empty()) throw ParseError(where + ": empty numeric field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw ParseError(where + ": '" + s + "' is not a finite number");
  return v;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json proportion_json(const std::optional<Proportion>& p) {
  if (!p) return nullptr;
  return Json{{"estimate", p->estimate}, {"se", p->se}, {"ci_low", p->ci_low}, {"ci_high", p->ci_high}};
}

std::string optional_field(const std::optional<Proportion>& p, double Proportion::*field) {
  return p ? format_full((*p).*field) : std::string();
}

}  // namespace

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

DesignSpec design_from_json(const Json& j) {
  const std::string where = "design";
  if (!j.is_object()) throw ParseError("design must be a JSON object");
  DesignSpec spec;
  const Json& subsets = require(j, "subsets", where);
  if (!subsets.is_array()) throw ParseError("design.subsets must be an array");
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const std::string w = where + ".subsets[" + std::to_string(i) + "]";
    const Json& s = subsets[i];
    Subset sub;
    sub.label = as_string(require(s, "label", w), w + ".label");
    sub.prevalence = as_number(require(s, "prevalence", w), w + ".prevalence");
    if (s.contains("weight") && !s.at("weight").is_null()) sub.weight = as_number(s.at("weight"), w + ".weight");
    spec.subsets.push_back(std::move(sub));
  }
  const Json& composites = require(j, "composites", where);
  if (!composites.is_array()) throw ParseError("design.composites must be an array of label lists");
  std::vector<std::string> problems;
  for (std::size_t r = 0; r < composites.size(); ++r) {
    const std::string w = where + ".composites[" + std::to_string(r) + "]";
    if (!composites[r].is_array()) throw ParseError(w + " must be an array of subset labels");
    IndexSet set;
    for (const auto& label : composites[r]) {
      const std::string l = as_string(label, w + " entry");
      try {
        set.push_back(label_index(spec, l));
      } catch (const ValidationError& e) {
        problems.push_back(w + ": " + e.what());
      }
    }
    spec.composites.push_back(std::move(set));
  }
  if (!problems.empty()) throw ValidationError(problems);
  spec.kappa = number_or(j, "kappa", spec.kappa, where);
  if (j.contains("n_covariates")) spec.n_covariates = static_cast<int>(as_integer(j.at("n_covariates"), "design.n_covariates"));
  spec.alpha = number_or(j, "alpha", spec.alpha, where);
  spec.target_power = number_or(j, "target_power", spec.target_power, where);
  return validate(std::move(spec));
}

Json to_json(const DesignSpec& spec) {
  Json subsets = Json::array();
  for (const auto& s : spec.subsets) {
    Json o{{"label", s.label}, {"prevalence", s.prevalence}};
    o["weight"] = s.effective_weight();
    subsets.push_back(std::move(o));
  }
  Json composites = Json::array();
  for (const auto& c : spec.composites) {
    Json labels = Json::array();
    for (std::size_t i : c) labels.push_back(spec.subsets[i].label);
    composites.push_back(std::move(labels));
  }
  return Json{{"subsets", subsets},         {"composites", composites},
              {"kappa", spec.kappa},        {"n_covariates", spec.n_covariates},
              {"alpha", spec.alpha},        {"target_power", spec.target_power}};
}

SubsetAssumptions assumptions_from_json(const Json& j, const DesignSpec& spec) {
  SubsetAssumptions a = per_subset_from_json(j, spec, "assumptions");
  validate_assumptions(spec, a);
  return a;
}

Json assumptions_to_json(const DesignSpec& spec, std::span<const SubsetAssumption> assume) {
  Json o = Json::object();
  for (std::size_t i = 0; i < assume.size(); ++i)
    o[spec.subsets[i].label] = Json{{"effect", assume[i].effect},
                                   {"variance", assume[i].variance},
                                   {"rho_squared", assume[i].rho_squared}};
  return o;
}

SigmaASettings sigma_a_from_json(const Json& j, SigmaASettings base) {
  if (!j.is_object()) throw ParseError("sigma_a settings must be an object");
  if (j.contains("runs")) base.runs = as_integer(j.at("runs"), "sigma_a.runs");
  if (j.contains("per_run_n")) base.per_run_n = as_integer(j.at("per_run_n"), "sigma_a.per_run_n");
  if (j.contains("seed")) base.seed = as_seed(j.at("seed"), "sigma_a.seed");
  if (j.contains("route")) {
    const std::string r = as_string(j.at("route"), "sigma_a.route");
    if (r == "subject") base.route = SigmaARoute::kSubjectLevel;
    else if (r == "sufficient") base.route = SigmaARoute::kSufficientStatistic;
    else throw ValidationError("sigma_a.route must be 'subject' or 'sufficient'");
  }
  base.validate();
  return base;
}

Json to_json(const SigmaASettings& s) {
  return Json{{"runs", s.runs}, {"per_run_n", s.per_run_n}, {"seed", s.seed}, {"route", to_string(s.route)}};
}

std::vector<ScenarioConfig> scenarios_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("scenario file must be a JSON object");
  const Json defaults = j.contains("defaults") ? j.at("defaults") : Json::object();
  if (!defaults.is_object()) throw ParseError("scenario defaults must be an object");
  const Json& list = require(j, "scenarios", "scenario file");
  if (!list.is_array()) throw ParseError("'scenarios' must be an array");

  std::vector<ScenarioConfig> out;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < list.size(); ++k) {
    if (!list[k].is_object()) throw ParseError("scenario " + std::to_string(k + 1) + " must be an object");
    Json s = defaults;
    for (const auto& [key, v] : list[k].items()) s[key] = v;
    const std::string where = "scenario " + std::to_string(k + 1);

    ScenarioConfig c;
    c.name = s.contains("name") ? as_string(s.at("name"), where + ".name") : "scenario-" + std::to_string(k + 1);
    if (std::find(names.begin(), names.end(), c.name) != names.end())
      throw ValidationError("duplicate scenario name '" + c.name + "'");
    names.push_back(c.name);
    c.design = design_from_json(require(s, "design", where));
    c.assumed = assumptions_from_json(require(s, "assumed", where), c.design);
    if (s.contains("truth")) {
      for (const auto& a : per_subset_from_json(s.at("truth"), c.design, where + ".truth"))
        c.truth.push_back({a.effect, a.variance, a.rho_squared});
    } else {
      for (const auto& a : c.assumed) c.truth.push_back({a.effect, a.variance, a.rho_squared});
    }
    if (s.contains("covariate_variances")) {
      for (const auto& v : s.at("covariate_variances")) c.covariate_variances.push_back(as_number(v, where + ".covariate_variances"));
    }
    c.nu = number_or(s, "nu", 0.0, where);
    if (s.contains("rule")) c.rule = parse_rule(as_string(s.at("rule"), where + ".rule"));
    if (s.contains("runs")) c.runs = as_integer(s.at("runs"), where + ".runs");
    if (s.contains("seed")) c.seed = as_seed(s.at("seed"), where + ".seed");
    if (s.contains("sigma_a")) c.planning.sigma_a = sigma_a_from_json(s.at("sigma_a"), c.planning.sigma_a);
    // The re-calculation reuses the planning B and seed unless told otherwise.
    c.recalc_sigma_a.runs = c.planning.sigma_a.runs;
    c.recalc_sigma_a.per_run_n = c.planning.sigma_a.per_run_n;
    c.recalc_sigma_a.seed = c.planning.sigma_a.seed;
    if (s.contains("recalc_sigma_a")) c.recalc_sigma_a = sigma_a_from_json(s.at("recalc_sigma_a"), c.recalc_sigma_a);
    if (s.contains("mvn")) c.planning.mvn = mvn_from_json(s.at("mvn"), c.planning.mvn);
    if (s.contains("imbalance")) c.planning.imbalance = parse_imbalance(as_string(s.at("imbalance"), where + ".imbalance"));
    if (s.contains("reestimate_prevalence"))
      c.reestimate_prevalence = as_bool(s.at("reestimate_prevalence"), where + ".reestimate_prevalence");
    if (s.contains("compute_oracle")) c.compute_oracle = as_bool(s.at("compute_oracle"), where + ".compute_oracle");
    c.validate();
    out.push_back(std::move(c));
  }
  return out;
}

Json to_json(const ScenarioConfig& c) {
  Json truth = Json::object();
  for (std::size_t i = 0; i < c.truth.size(); ++i)
    truth[c.design.subsets[i].label] =
        Json{{"effect", c.truth[i].effect}, {"variance", c.truth[i].variance}, {"rho_squared", c.truth[i].rho_squared}};
  return Json{{"name", c.name},
              {"design", to_json(c.design)},
              {"assumed", assumptions_to_json(c.design, c.assumed)},
              {"truth", truth},
              {"covariate_variances", c.resolved_covariate_variances()},
              {"nu", c.nu},
              {"rule", to_string(c.rule)},
              {"runs", c.runs},
              {"seed", c.seed},
              {"sigma_a", to_json(c.planning.sigma_a)},
              {"recalc_sigma_a", to_json(c.recalc_sigma_a)},
              {"mvn",
               Json{{"abs_tolerance", c.planning.mvn.abs_tolerance},
                    {"max_evaluations", c.planning.mvn.max_evaluations},
                    {"seed", c.planning.mvn.rng_seed}}},
              {"imbalance", to_string(c.planning.imbalance)},
              {"reestimate_prevalence", c.reestimate_prevalence},
              {"compute_oracle", c.compute_oracle}};
}

std::vector<SubjectRecord> read_dataset_csv(std::istream& in, int n_covariates, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) throw ParseError(source + ": missing header row");

  auto find = [&](const std::string& name) -> long {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<long>(it - header.begin());
  };
  const long c_subset = find("subset");
  const long c_arm = find("arm");
  const long c_y = find("y");
  if (c_subset < 0 || c_y < 0) throw ParseError(source + ": header needs 'subset' and 'y' columns");
  std::vector<long> c_x;
  for (int d = 1; d <= n_covariates; ++d) {
    const long c = find("x" + std::to_string(d));
    if (c < 0) throw ParseError(source + ": header lacks covariate column 'x" + std::to_string(d) + "'");
    c_x.push_back(c);
  }

  std::vector<SubjectRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    const std::vector<std::string> f = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (f.size() != header.size()) throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields");
    SubjectRecord r;
    r.subset = f[static_cast<std::size_t>(c_subset)];
    if (r.subset.empty()) throw ParseError(where + ": empty subset label");
    if (c_arm >= 0) {
      const std::string& a = f[static_cast<std::size_t>(c_arm)];
      if (a == "T") r.arm = Arm::kTreated;
      else if (a == "C") r.arm = Arm::kControl;
      else if (!a.empty()) throw ParseError(where + ": arm must be 'T', 'C' or blank");
    }
    r.y = parse_double(f[static_cast<std::size_t>(c_y)], where);
    for (long c : c_x) r.x.push_back(parse_double(f[static_cast<std::size_t>(c)], where));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SubjectRecord> read_dataset_csv_file(const std::string& path, int n_covariates) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_dataset_csv(in, n_covariates, path);
}

void write_dataset_csv(std::ostream& out, std::span<const SubjectRecord> records, int n_covariates, bool with_arm) {
  out << "subset";
  if (with_arm) out << ",arm";
  out << ",y";
  for (int d = 1; d <= n_covariates; ++d) out << ",x" << d;
  out << '\n';
  for (const auto& r : records) {
    out << r.subset;
    if (with_arm) out << ',' << (r.arm ? (*r.arm == Arm::kTreated ? "T" : "C") : "");
    out << ',' << format_full(r.y);
    for (double x : r.x) out << ',' << format_full(x);
    out << '\n';
  }
}

Json to_json(const CorrelationMatrix& m) { return matrix_json(m.matrix()); }

Json to_json(const SubsetFit& f) {
  Json o{{"effect", f.effect},
         {"variance", f.variance},
         {"variance_qr", f.variance_qr},
         {"t", f.t},
         {"df", f.df},
         {"p", f.p},
         {"normal_score", f.score},
         {"residual_variance", f.residual_variance},
         {"r_squared", f.r_squared},
         {"n_treated", f.n_treated},
         {"n_control", f.n_control}};
  o["mean_difference"] = std::vector<double>(f.mean_difference.data(), f.mean_difference.data() + f.mean_difference.size());
  o["covariate_cov"] = matrix_json(f.covariate_cov);
  return o;
}

Json to_json(const Analysis& a, const DesignSpec& spec) {
  Json fits = Json::object();
  for (std::size_t j = 0; j < a.fits.size(); ++j) fits[spec.subsets[j].label] = to_json(a.fits[j]);
  Json tests = Json::array();
  for (const auto& t : a.report.intersections) {
    Json members = Json::array();
    for (std::size_t r = 0; r < spec.n_composites(); ++r)
      if (t.members & (1U << r)) members.push_back(r + 1);
    Json o{{"composites", members}, {"max_statistic", t.max_statistic}, {"rejected", t.rejected}, {"evaluated", t.evaluated}};
    o["critical_value"] = std::isnan(t.critical_value) ? Json(nullptr) : Json(t.critical_value);
    tests.push_back(std::move(o));
  }
  Json decisions = Json::array();
  for (std::size_t r = 0; r < spec.n_composites(); ++r)
    decisions.push_back(Json{{"composite", r + 1}, {"z", a.composite_z[r]}, {"rejected", bool(a.report.elementary_rejected[r])}});
  return Json{{"subset_fits", fits},
              {"p_value_below_clamp", a.p_underflow},
              {"composites", decisions},
              {"intersections", tests},
              {"global_rejected", a.report.global_rejected()}};
}

Json to_json(const SimulationSummary& s) {
  return Json{{"scenario", s.scenario},
              {"runs", s.runs},
              {"failed_runs", s.failed_runs},
              {"first_error", s.first_error},
              {"n0", s.n0},
              {"n1", s.n1},
              {"n_oracle", s.n_oracle},
              {"elementary_rate", s.elementary_rate},
              {"global_rate", s.global_rate},
              {"fwer", proportion_json(s.fwer)},
              {"fwer_nominal", Json::array({s.fwer_nominal_low, s.fwer_nominal_high})},
              {"power", proportion_json(s.power)},
              {"n_final_mean", s.n_final_mean},
              {"n_final_q10", s.n_final_q10},
              {"n_final_q90", s.n_final_q90},
              {"n_reest_mean", s.n_reest_mean}};
}

std::string format_sig(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, value);
  return buf;
}

std::string format_full(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_summary_csv(std::ostream& out, const std::vector<ScenarioResult>& results, const Json& config) {
  std::size_t r_max = 0;
  for (const auto& r : results)
    if (r.summary) r_max = std::max(r_max, r.summary->elementary_rate.size());
  out << "# config " << config.dump() << '\n';
  out << "scenario,status,error,runs,failed_runs,n0,n1,n_oracle,global_rate";
  for (std::size_t k = 1; k <= r_max; ++k) out << ",reject_" << k;
  out << ",fwer,fwer_se,fwer_ci_low,fwer_ci_high,fwer_nominal_low,fwer_nominal_high"
         ",power,power_se,power_ci_low,power_ci_high,n_final_mean,n_final_q10,n_final_q90,n_reest_mean\n";
  for (const auto& r : results) {
    std::string err = r.summary ? r.summary->first_error : r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << r.name << ',' << (r.summary ? "ok" : "error") << ',' << err;
    if (!r.summary) {
      out << std::string(6 + r_max + 14, ',') << '\n';
      continue;
    }
    const auto& s = *r.summary;
    out << ',' << s.runs << ',' << s.failed_runs << ',' << s.n0 << ',' << s.n1 << ',' << s.n_oracle << ','
        << format_full(s.global_rate);
    for (std::size_t k = 0; k < r_max; ++k)
      out << ',' << (k < s.elementary_rate.size() ? format_full(s.elementary_rate[k]) : std::string());
    out << ',' << optional_field(s.fwer, &Proportion::estimate) << ',' << optional_field(s.fwer, &Proportion::se) << ','
        << optional_field(s.fwer, &Proportion::ci_low) << ',' << optional_field(s.fwer, &Proportion::ci_high) << ','
        << format_full(s.fwer_nominal_low) << ',' << format_full(s.fwer_nominal_high) << ','
        << optional_field(s.power, &Proportion::estimate) << ',' << optional_field(s.power, &Proportion::se) << ','
        << optional_field(s.power, &Proportion::ci_low) << ',' << optional_field(s.power, &Proportion::ci_high) << ','
        << format_full(s.n_final_mean) << ',' << format_full(s.n_final_q10) << ',' << format_full(s.n_final_q90)
        << ',' << format_full(s.n_reest_mean) << '\n';
  }
}

void write_runs_csv(std::ostream& out, const std::vector<ScenarioResult>& results, const Json& config) {
  out << "# config " << config.dump() << '\n';
  out << "scenario,run,failed,n_reest,n_final,rejected_mask,global_rejected\n";
  for (const auto& r : results) {
    for (std::size_t k = 0; k < r.outcomes.size(); ++k) {
      const auto& o = r.outcomes[k];
      out << r.name << ',' << k << ',' << (o.failed ? 1 : 0) << ',' << o.n_reest << ',' << o.n_final << ','
          << o.rejected << ',' << (o.global_rejected ? 1 : 0) << '\n';
    }
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << text;
}

}  // namespace compop
