#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "droplab/competitor.hpp"
#include "droplab/data.hpp"
#include "droplab/model.hpp"

namespace droplab {

/// `standard` trains the masked network and rescales by q at the end;
/// `inverted` scales kept units by 1/q during training and skips the rescale.
enum class Variant { standard, inverted };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct TrainConfig {
  std::size_t m = 0;
  std::size_t d = 0;
  double q = 1.0;
  double eta = 0.0;
  double c = 0.0;  ///< max-norm radius
  std::size_t T = 1;
  std::uint64_t seed = 0;
  Variant variant = Variant::standard;
  std::size_t snapshot_stride = 1;
  /// Keep W copies at every record iteration; otherwise only the last.
  bool keep_snapshots = true;
  /// Redraw W_1 until max_r ||w_r|| <= sqrt(d) + 2 sqrt(ln m).
  bool enforce_init_bound = true;

  /// Throws DomainError naming the offending field. With `theory_checks`,
  /// also requires eta <= ln 2.
  void validate(bool theory_checks = false) const;
  double mask_scale() const { return variant == Variant::inverted ? 1.0 / q : 1.0; }
};

/// Diagnostics of iteration t, evaluated at W_t on (x_t, B_t).
struct IterateRecord {
  std::size_t t = 0;
  double inst_loss = 0.0;    ///< L_t(W_t)
  double q_value = 0.0;      ///< Q_t(W_t)
  double sub_output = 0.0;   ///< y_t g_t(W_t)
  double full_output = 0.0;  ///< y_t f_t of the deployed weights (q W_t, or W_t when inverted)
  double max_drift = 0.0;    ///< max_r ||w_{r,t} - w_{r,1}||
  std::size_t flip_count = 0;
  std::size_t active_neurons = 0;
  std::size_t projection_hits = 0;  ///< rows clipped when forming W_{t+1}
  double lemma1_slack = std::numeric_limits<double>::quiet_NaN();
  double lemma2_linloss = std::numeric_limits<double>::quiet_NaN();
};

/// Per-iteration values kept for every t (the records are strided).
struct StepTrace {
  double inst_loss = 0.0;
  double q_value = 0.0;
  double max_drift = 0.0;
  std::size_t flip_count = 0;
  std::size_t active_neurons = 0;
  std::size_t projection_hits = 0;
  double half_step_norm = 0.0;  ///< ||W_{t+1/2} - W_t||_F, 0 at t = T
  double init_output = 0.0;     ///< g_t(W_1)
  // Competitor-dependent; NaN without a competitor.
  double init_margin = std::numeric_limits<double>::quiet_NaN();  ///< y_t g_t^{(1)}(V)
  double lin_loss = std::numeric_limits<double>::quiet_NaN();     ///< L_t^{(t)}(U)
  double telescope_slack = std::numeric_limits<double>::quiet_NaN();
  double regret_slack = std::numeric_limits<double>::quiet_NaN();  ///< running Lemma-1 slack through t
};

struct Snapshot {
  std::size_t t = 0;
  Matrix W;
  DropoutMask mask;
};

/// Read-only view handed to observers at every iteration, before the update.
struct IterateView {
  std::size_t t;
  const Matrix& W;
  const DropoutMask& mask;
  const Example& example;
};
using IterateObserver = std::function<void(const IterateView&)>;

struct Trajectory {
  Matrix init;
  std::vector<Snapshot> snapshots;
  std::vector<StepTrace> steps;  ///< index t-1
  double init_dist_sq = std::numeric_limits<double>::quiet_NaN();  ///< ||W_1 - U||_F^2
};

struct TrainResult {
  NetworkParams initial;
  NetworkParams final_params;
  NetworkParams rescaled;
  std::vector<IterateRecord> records;
  Trajectory trajectory;
  std::optional<Competitor> competitor;
  std::size_t init_attempts = 1;
  std::size_t total_projection_hits = 0;
};

using CompetitorFactory = std::function<Competitor(const NetworkParams& init)>;

/// Row-wise projection onto the ball of radius c. Clipped rows satisfy
/// ||w_r||^2 <= c^2 in floating point, so a second projection is the identity.
Matrix project_maxnorm(Matrix W, double c);
std::size_t project_maxnorm_inplace(Matrix& W, double c);

struct StepOptions {
  Variant variant = Variant::standard;
  /// Reference for drift and flip diagnostics; defaults to the input weights.
  const Matrix* init = nullptr;
};

struct StepResult {
  NetworkParams params;
  IterateRecord record;
};

/// One update of dropout SGD followed by the max-norm projection.
StepResult dropout_step(const NetworkParams& params, const Example& example, const DropoutMask& mask,
                        double eta, double c, const StepOptions& opts = {});

/// Draws W_1 from the config's init stream (with the optional norm bound).
InitResult initialize(const TrainConfig& config, std::size_t* attempts = nullptr);

/// Full dropout training run: T-1 updates, T evaluated iterates.
TrainResult train(const TrainConfig& config, ExampleSource& data,
                  const CompetitorFactory& make_competitor = {}, const IterateObserver& observer = {});

/// Same, from given initial weights.
TrainResult train_from(const TrainConfig& config, const NetworkParams& init, ExampleSource& data,
                       const Competitor* competitor = nullptr, const IterateObserver& observer = {});

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
    "t,inst_loss,q_value,sub_output,full_output,max_drift,flip_count,active_neurons,"
    "projection_hits,lemma1_slack,lemma2_linloss";

/// Shortest round-trip decimal form; empty for NaN.
std::string format_number(double v);

std::string metrics_row(const IterateRecord& rec);
void write_metrics_csv(std::ostream& out, const std::vector<IterateRecord>& records);

}  // namespace droplab
