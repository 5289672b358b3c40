#pragma once

// File formats: JSON design / assumptions / scenario documents, the CSV
// dataset dialect, and the JSON and CSV artifacts written by the CLI.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "compop/design.hpp"
#include "compop/inference.hpp"
#include "compop/planning.hpp"
#include "compop/recalc.hpp"
#include "compop/simulate.hpp"

namespace compop {

using Json = nlohmann::ordered_json;

/// Reads and parses a JSON file. Throws ParseError.
Json read_json_file(const std::string& path);

DesignSpec design_from_json(const Json& j);
Json to_json(const DesignSpec& spec);

/// Object keyed by subset label: {"effect", "variance", "rho" | "rho_squared"}.
/// "rho" is the multiple correlation, "rho_squared" its square.
SubsetAssumptions assumptions_from_json(const Json& j, const DesignSpec& spec);
Json assumptions_to_json(const DesignSpec& spec, std::span<const SubsetAssumption> assume);

SigmaASettings sigma_a_from_json(const Json& j, SigmaASettings base);
Json to_json(const SigmaASettings& s);

/// {"defaults": {...}, "scenarios": [{...}, ...]}; each scenario is merged
/// over the defaults key by key.
std::vector<ScenarioConfig> scenarios_from_json(const Json& j);
Json to_json(const ScenarioConfig& config);

/// CSV with header subset,arm,y,x1..xD. The arm column may be missing or
/// blank (blinded data). Throws ParseError.
std::vector<SubjectRecord> read_dataset_csv(std::istream& in, int n_covariates, const std::string& source = "<stream>");
std::vector<SubjectRecord> read_dataset_csv_file(const std::string& path, int n_covariates);
void write_dataset_csv(std::ostream& out, std::span<const SubjectRecord> records, int n_covariates, bool with_arm);

Json to_json(const CorrelationMatrix& m);
Json to_json(const SubsetFit& fit);
Json to_json(const Analysis& analysis, const DesignSpec& spec);
Json to_json(const SimulationSummary& s);

/// `digits` significant digits, for human-readable tables.
std::string format_sig(double value, int digits = 6);

/// Shortest representation that round-trips, for machine-readable CSV.
std::string format_full(double value);

/// One row per scenario, preceded by a "# config <json>" line.
void write_summary_csv(std::ostream& out, const std::vector<ScenarioResult>& results, const Json& config);

/// One row per run of every scenario that kept its outcomes.
void write_runs_csv(std::ostream& out, const std::vector<ScenarioResult>& results, const Json& config);

/// Writes `text` to `path` ("-" = stdout). Throws ParseError if it cannot be opened.
void write_text(const std::string& path, const std::string& text);

}  // namespace compop
