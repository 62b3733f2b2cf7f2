#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "droplab/theory.hpp"
#include "droplab/trainer.hpp"

namespace droplab {

/// Validation failure in an experiment config. what() lists every offending
/// key with its constraint, one per line.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class DataSource { halfspace, mnist, file };

struct ExperimentSpec {
  std::string name = "experiment";
  std::vector<std::size_t> widths;
  std::vector<double> keep_probs;  ///< q per cell; dropout rate is 1 - q
  std::size_t d = 0;
  std::size_t T = 0;
  double eta = 0.0;
  std::optional<double> c;  ///< default: the theory module's c for (gamma, d, m)
  std::uint64_t seed = 1;
  std::size_t n_seeds = 1;
  Variant variant = Variant::standard;
  std::size_t snapshot_stride = 1;
  std::size_t eval_stride = 1;  ///< risk evaluation every eval_stride iterations (plus t=1 and t=T)
  double delta = 0.05;
  std::size_t n_mc = 2000;           ///< held-out test set size per cell
  std::size_t n_random_masks = 0;    ///< fresh masks evaluated at each eval row
  DataSource data = DataSource::halfspace;
  double gamma0 = 0.0;
  std::filesystem::path mnist_dir;
  int digit_pos = 1;
  int digit_neg = 7;
  std::filesystem::path data_path;
  bool theory_checks = true;
  std::filesystem::path output_dir = "results";
  std::size_t checkpoint_stride = 0;  ///< 0 disables checkpoints
  std::size_t threads = 0;            ///< 0 = hardware concurrency

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  std::filesystem::path cell_dir() const { return output_dir / name; }
};

/// Parses the flat `key = value` format. Lines starting with '#' are comments,
/// lists are comma separated. Unknown keys, duplicates and malformed values are
/// errors. `dropout_rate` may be given instead of `q`.
ExperimentSpec parse_config(std::string_view text);
ExperimentSpec load_config(const std::filesystem::path& path);

/// Cell CSV header: the metric columns followed by the risk columns, which are
/// filled only on evaluation rows.
inline constexpr const char* kCellHeader =
    "t,inst_loss,q_value,sub_output,full_output,max_drift,flip_count,active_neurons,"
    "projection_hits,lemma1_slack,lemma2_linloss,risk_full,risk_visited,risk_random";

struct CellKey {
  std::size_t m = 0;
  double q = 1.0;
  std::uint64_t seed = 0;
};

std::string cell_file_name(const CellKey& key);

/// Training and held-out examples for the dataset-backed sources (empty for
/// halfspace, which samples on the fly).
struct LoadedData {
  std::vector<Example> train;
  std::vector<Example> test;
};

/// MNIST uses the t10k split as the test set when present; otherwise (and for
/// `file`) the last fifth of the examples is held out.
LoadedData load_data(const ExperimentSpec& spec, const WarningSink& warn = {});

struct CellRow {
  IterateRecord record;
  double risk_full = std::numeric_limits<double>::quiet_NaN();
  double risk_visited = std::numeric_limits<double>::quiet_NaN();
  double risk_random = std::numeric_limits<double>::quiet_NaN();
  bool evaluated() const { return !std::isnan(risk_full); }
};

struct CellResult {
  CellKey key;
  std::vector<CellRow> rows;
  std::optional<LemmaReport> lemmas;  ///< absent when no competitor could be built
  std::string lemma_note;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double c = 0.0;
};

/// Trains one cell and evaluates its risks. With `evaluate_risk` false the
/// risk columns stay empty (the verify command only needs the lemma report).
/// `data` may be null, in which case dataset-backed sources are loaded here.
CellResult run_cell(const ExperimentSpec& spec, const CellKey& key, const LoadedData* data = nullptr,
                    bool evaluate_risk = true);

void write_cell_csv(std::ostream& out, const CellResult& cell);

/// Per-(m, q) means and sample standard deviations over seeds of the final
/// row's metrics, plus risk_full_avg (the risk averaged over evaluation rows).
void write_summary_csv(std::ostream& out, const std::vector<CellResult>& cells);

nlohmann::json lemma_report_json(const ExperimentSpec& spec, const std::vector<CellResult>& cells);

struct RunOptions {
  bool write_cells = true;
  bool evaluate_risk = true;
  std::ostream* log = nullptr;
};

/// Runs every (m, q, seed) cell on a worker pool, then writes the CSVs,
/// summary.csv and lemma_report.json into spec.cell_dir().
std::vector<CellResult> run_experiment(const ExperimentSpec& spec, const RunOptions& opts = {});

/// True when no aggregated check failed among those that are binding: the
/// deterministic checks always, the high-probability ones only when the
/// preconditions are met.
bool lemma_suite_passed(const std::vector<CellResult>& cells, double delta);

}  // namespace droplab
