#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "droplab/competitor.hpp"
#include "droplab/data.hpp"
#include "droplab/model.hpp"
#include "droplab/trainer.hpp"

namespace droplab {

// ---------------------------------------------------------------------------
// Competitor

/// V rows = a_r psi(w_{r,1}) / sqrt(m); U = W_1 + lambda V.
Competitor build_competitor(const NetworkParams& init, const FeatureMap& psi, double lambda, double gamma);
/// Uses the MarginSpec feature map; gamma is the certified margin (halfspace only).
Competitor build_competitor(const NetworkParams& init, const MarginSpec& spec, double lambda);

/// True when every row of U lies in the radius-c ball.
bool competitor_in_ball(const Competitor& comp, double c);

// ---------------------------------------------------------------------------
// Theorem constants

struct BoundReport {
  double gamma = 0.0;
  double eta = 0.0;
  std::size_t T = 0;
  std::size_t m = 0;
  std::size_t d = 0;
  double delta = 0.0;

  double c = 0.0;           ///< sqrt(d) + max{1/(14 gamma^2), 2 sqrt(ln m)} + 1
  double lambda = 0.0;      ///< 5/gamma ln(2 eta T) + sqrt(44/gamma^2 ln(24 eta c sqrt(m) T^2))
  double m_required = 0.0;  ///< 2401 gamma^-6 lambda^2
  double thm1_bound = 0.0;  ///< 4 lambda^2 / (eta T)
  double thm2_bound = 0.0;  ///< 12 lambda^2 / (eta T) + 6 ln(1/delta) / T
  double worst_case_loss = 0.0;  ///< c sqrt(m) / ln 2 + 1
  double init_norm_bound = 0.0;  ///< sqrt(d) + 2 sqrt(ln m)
  bool width_ok = false;         ///< m >= m_required
  bool eta_ok = false;           ///< eta <= ln 2
  /// A logarithm argument was clamped (ln(2 eta T) at 1, the square-root log at
  /// e); the horizon is too short for the theorem.
  bool log_clamped = false;
};

BoundReport compute_bounds(double gamma, double eta, std::size_t T, std::size_t m, std::size_t d, double delta);

void to_json(nlohmann::json& j, const BoundReport& r);
std::string format_bounds(const BoundReport& r);

// ---------------------------------------------------------------------------
// Analysis objects

/// L_t^{(t)}(U) = l(y <grad g_t(W_t), U>).
double linearized_loss(const NetworkParams& params_t, const DropoutMask& mask, const Example& example,
                       const Matrix& U);

/// Hidden units whose activation on x differs between W_t and W_1.
std::size_t flip_count(const NetworkParams& params_t, const NetworkParams& params_init, const Vector& x);

/// Lemma A.4 bound m D + sqrt(m ln(3T/delta) / 2).
double flip_count_bound(std::size_t m, double drift, std::size_t T, double delta);

struct ProbabilityEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

/// Monte Carlo Pr{|w.x| <= D} for w ~ N(0, I_d) and a fixed unit x.
ProbabilityEstimate small_ball_probability(RngStream& rng, const Vector& x, double D, std::size_t n);

// ---------------------------------------------------------------------------
// Lemma verification

enum class CheckStatus { passed, failed, skipped };
std::string to_string(CheckStatus s);

struct LemmaCheck {
  std::string id;
  std::string description;
  double bound = 0.0;
  double observed = 0.0;
  double slack = 0.0;  ///< >= 0 means the inequality held
  CheckStatus status = CheckStatus::skipped;
  std::string note;
  std::size_t seeds_passed = 0;
  std::size_t seeds_total = 0;
};

struct LemmaReport {
  std::vector<LemmaCheck> checks;
  BoundReport bounds;
  /// m >= m_required and eta <= ln 2; otherwise results are informational.
  bool preconditions_met = false;
  std::string precondition_note;

  const LemmaCheck& check(const std::string& id) const;
  bool all_passed() const;  ///< no failed check (skipped checks are not failures)
};

/// Tolerance for the deterministic inequalities (accumulated rounding).
inline constexpr double kDeterministicTolerance = 1e-9;

/// Evaluates every lemma on one run trained with a competitor.
///
/// Checks: lemma1_regret, lemma1_telescoping, lemma2_drift,
/// lemma2_linearized_loss, lemmaA4_flip_count, lemmaA6_init_output,
/// lemmaA7_margin, lemmaA8_worst_case. Lemma 1 and 2 checks are skipped when
/// the variant is inverted, eta > ln 2, or U lies outside the radius-c ball
/// while the projection was active during the run.
LemmaReport verify_lemmas(const TrainResult& run, const TrainConfig& config, double delta);

/// Merges per-seed reports: seeds_passed / seeds_total per check. A
/// high-probability check passes when at least ceil((1 - delta) n) seeds pass;
/// deterministic checks must pass on every seed.
LemmaReport aggregate_reports(std::span<const LemmaReport> reports, double delta);

void to_json(nlohmann::json& j, const LemmaCheck& c);
void to_json(nlohmann::json& j, const LemmaReport& r);

// ---------------------------------------------------------------------------
// Risk

struct RiskEstimate {
  double rate = 0.0;
  double standard_error = 0.0;
  std::size_t samples = 0;
};

/// Misclassification rates on a fixed sample for several sub-networks at once;
/// a null mask means the full network. y * output <= 0 counts as an error.
std::vector<RiskEstimate> evaluate_risks(const NetworkParams& params, std::span<const DropoutMask* const> masks,
                                         std::span<const Example> sample);

RiskEstimate evaluate_risk(const NetworkParams& params, const DropoutMask* mask, std::span<const Example> sample);

/// Monte Carlo risk on n_mc fresh draws from a halfspace spec.
RiskEstimate estimate_risk(const NetworkParams& params, const DropoutMask* mask, const MarginSpec& spec,
                           RngStream& rng, std::size_t n_mc);

}  // namespace droplab
