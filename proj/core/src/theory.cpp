#include "droplab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace droplab {

Competitor build_competitor(const NetworkParams& init, const FeatureMap& psi, double lambda, double gamma) {
  if (!(lambda >= 0.0)) throw DomainError("build_competitor: lambda must be >= 0");
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(init.width()));
  Competitor comp;
  comp.lambda = lambda;
  comp.gamma = gamma;
  comp.V.resize(init.W.rows(), init.W.cols());
  for (Eigen::Index r = 0; r < init.W.rows(); ++r) {
    const Vector w = init.W.row(r).transpose();
    const Vector p = psi(w);
    if (p.size() != init.W.cols()) throw DomainError("build_competitor: psi returned the wrong dimension");
    if (p.norm() > 1.0 + 1e-12) throw DomainError("build_competitor: ||psi(z)|| exceeds 1");
    comp.V.row(r) = (init.a[r] * inv_sqrt_m) * p.transpose();
  }
  if (comp.V.norm() > 1.0 + 1e-12) throw DomainError("build_competitor: ||V||_F exceeds 1");
  comp.U = init.W + lambda * comp.V;
  return comp;
}

Competitor build_competitor(const NetworkParams& init, const MarginSpec& spec, double lambda) {
  return build_competitor(init, spec.psi(), lambda, certified_margin(spec));
}

bool competitor_in_ball(const Competitor& comp, double c) {
  const double c2 = c * c;
  for (Eigen::Index r = 0; r < comp.U.rows(); ++r)
    if (comp.U.row(r).squaredNorm() > c2) return false;
  return true;
}

// ---------------------------------------------------------------------------

BoundReport compute_bounds(double gamma, double eta, std::size_t T, std::size_t m, std::size_t d, double delta) {
  if (!(gamma > 0.0)) throw DomainError("compute_bounds: gamma must be > 0");
  if (!(eta > 0.0)) throw DomainError("compute_bounds: eta must be > 0");
  if (T == 0 || m == 0 || d == 0) throw DomainError("compute_bounds: T, m and d must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("compute_bounds: delta must lie in (0, 1)");

  BoundReport r;
  r.gamma = gamma;
  r.eta = eta;
  r.T = T;
  r.m = m;
  r.d = d;
  r.delta = delta;

  const double Td = static_cast<double>(T);
  const double md = static_cast<double>(m);
  const double sqrt_m = std::sqrt(md);
  // c depends on gamma only, so it is fixed before lambda (whose log uses c).
  r.init_norm_bound = std::sqrt(static_cast<double>(d)) + 2.0 * std::sqrt(std::log(md));
  r.c = std::sqrt(static_cast<double>(d)) + std::max(1.0 / (14.0 * gamma * gamma), 2.0 * std::sqrt(std::log(md))) + 1.0;

  double arg_lin = 2.0 * eta * Td;
  double arg_sqrt = 24.0 * eta * r.c * sqrt_m * Td * Td;
  if (arg_lin < 1.0) {
    arg_lin = 1.0;
    r.log_clamped = true;
  }
  if (arg_sqrt < std::numbers::e) {
    arg_sqrt = std::numbers::e;
    r.log_clamped = true;
  }
  r.lambda = 5.0 / gamma * std::log(arg_lin) + std::sqrt(44.0 / (gamma * gamma) * std::log(arg_sqrt));
  r.m_required = 2401.0 * std::pow(gamma, -6.0) * r.lambda * r.lambda;
  r.thm1_bound = 4.0 * r.lambda * r.lambda / (eta * Td);
  r.thm2_bound = 12.0 * r.lambda * r.lambda / (eta * Td) + 6.0 * std::log(1.0 / delta) / Td;
  r.worst_case_loss = r.c * sqrt_m / std::numbers::ln2 + 1.0;
  r.width_ok = md >= r.m_required;
  r.eta_ok = eta <= std::numbers::ln2;
  return r;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  j = nlohmann::json{{"gamma", r.gamma},
                     {"eta", r.eta},
                     {"T", r.T},
                     {"m", r.m},
                     {"d", r.d},
                     {"delta", r.delta},
                     {"c", r.c},
                     {"lambda", r.lambda},
                     {"m_required", r.m_required},
                     {"thm1_bound", r.thm1_bound},
                     {"thm2_bound", r.thm2_bound},
                     {"worst_case_loss", r.worst_case_loss},
                     {"init_norm_bound", r.init_norm_bound},
                     {"width_ok", r.width_ok},
                     {"eta_ok", r.eta_ok},
                     {"log_clamped", r.log_clamped}};
}

std::string format_bounds(const BoundReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "gamma            " << r.gamma << '\n'
     << "eta              " << r.eta << '\n'
     << "T                " << r.T << '\n'
     << "m                " << r.m << '\n'
     << "d                " << r.d << '\n'
     << "delta            " << r.delta << '\n'
     << "c                " << r.c << '\n'
     << "lambda           " << r.lambda << '\n'
     << "m_required       " << r.m_required << (r.width_ok ? "  (met)" : "  (NOT met)") << '\n'
     << "thm1_bound       " << r.thm1_bound << '\n'
     << "thm2_bound       " << r.thm2_bound << '\n'
     << "worst_case_loss  " << r.worst_case_loss << '\n'
     << "init_norm_bound  " << r.init_norm_bound << '\n';
  if (!r.eta_ok) os << "warning: eta > ln 2, outside the theorem's learning-rate range\n";
  if (r.log_clamped) os << "warning: T too small, a logarithm argument was clamped\n";
  return os.str();
}

// ---------------------------------------------------------------------------

double linearized_loss(const NetworkParams& params_t, const DropoutMask& mask, const Example& example,
                       const Matrix& U) {
  if (U.rows() != params_t.W.rows() || U.cols() != params_t.W.cols())
    throw DomainError("linearized_loss: U has a different shape than W");
  const Matrix G = grad_sub(params_t, mask, example.x);
  return logistic_loss(example.y * frobenius_dot(G, U));
}

std::size_t flip_count(const NetworkParams& params_t, const NetworkParams& params_init, const Vector& x) {
  if (params_t.W.rows() != params_init.W.rows() || params_t.W.cols() != params_init.W.cols())
    throw DomainError("flip_count: weight shapes differ");
  if (x.size() != params_t.W.cols()) throw DomainError("flip_count: input dimension mismatch");
  const Vector now = params_t.W * x;
  const Vector then = params_init.W * x;
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < now.size(); ++r) n += (now[r] >= 0.0) != (then[r] >= 0.0);
  return n;
}

double flip_count_bound(std::size_t m, double drift, std::size_t T, double delta) {
  const double md = static_cast<double>(m);
  return md * drift + std::sqrt(md * std::log(3.0 * static_cast<double>(T) / delta) / 2.0);
}

ProbabilityEstimate small_ball_probability(RngStream& rng, const Vector& x, double D, std::size_t n) {
  if (n == 0) throw DomainError("small_ball_probability: n must be >= 1");
  std::size_t hits = 0;
  Vector w(x.size());
  for (std::size_t k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.normal();
    hits += std::abs(w.dot(x)) <= D;
  }
  ProbabilityEstimate p;
  p.samples = n;
  p.value = static_cast<double>(hits) / static_cast<double>(n);
  p.standard_error = std::sqrt(p.value * (1.0 - p.value) / static_cast<double>(n));
  return p;
}

// ---------------------------------------------------------------------------

std::string to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::passed: return "passed";
    case CheckStatus::failed: return "failed";
    case CheckStatus::skipped: return "skipped";
  }
  return "?";
}

const LemmaCheck& LemmaReport::check(const std::string& id) const {
  for (const auto& c : checks)
    if (c.id == id) return c;
  throw std::out_of_range("no lemma check named " + id);
}

bool LemmaReport::all_passed() const {
  return std::none_of(checks.begin(), checks.end(), [](const LemmaCheck& c) { return c.status == CheckStatus::failed; });
}

namespace {

bool is_deterministic(const std::string& id) {
  return id == "lemma1_regret" || id == "lemma1_telescoping" || id == "lemmaA8_worst_case";
}

// Upper-bound check: observed <= bound.
LemmaCheck upper(std::string id, std::string desc, double bound, double observed, double tol = 0.0) {
  LemmaCheck c;
  c.id = std::move(id);
  c.description = std::move(desc);
  c.bound = bound;
  c.observed = observed;
  c.slack = bound - observed;
  c.status = c.slack >= -tol ? CheckStatus::passed : CheckStatus::failed;
  c.seeds_total = 1;
  c.seeds_passed = c.status == CheckStatus::passed;
  return c;
}

LemmaCheck lower(std::string id, std::string desc, double bound, double observed) {
  LemmaCheck c;
  c.id = std::move(id);
  c.description = std::move(desc);
  c.bound = bound;
  c.observed = observed;
  c.slack = observed - bound;
  c.status = c.slack >= 0.0 ? CheckStatus::passed : CheckStatus::failed;
  c.seeds_total = 1;
  c.seeds_passed = c.status == CheckStatus::passed;
  return c;
}

LemmaCheck skipped(std::string id, std::string desc, std::string why) {
  LemmaCheck c;
  c.id = std::move(id);
  c.description = std::move(desc);
  c.status = CheckStatus::skipped;
  c.note = std::move(why);
  return c;
}

}  // namespace

LemmaReport verify_lemmas(const TrainResult& run, const TrainConfig& config, double delta) {
  if (!run.competitor) throw std::invalid_argument("verify_lemmas: run was trained without a competitor");
  if (run.trajectory.snapshots.empty()) throw std::invalid_argument("verify_lemmas: trajectory has no snapshots");
  const auto& steps = run.trajectory.steps;
  if (steps.size() != config.T) throw std::invalid_argument("verify_lemmas: trajectory length does not match T");
  const Competitor& comp = *run.competitor;

  LemmaReport rep;
  rep.bounds = compute_bounds(comp.gamma, config.eta, config.T, config.m, config.d, delta);
  rep.preconditions_met = rep.bounds.width_ok && rep.bounds.eta_ok;
  if (!rep.preconditions_met) {
    std::ostringstream os;
    os << "preconditions unmet:";
    if (!rep.bounds.width_ok) os << " m=" << config.m << " < m_required=" << rep.bounds.m_required << ';';
    if (!rep.bounds.eta_ok) os << " eta=" << config.eta << " > ln 2;";
    os << " results are informational";
    rep.precondition_note = os.str();
  }

  const double Td = static_cast<double>(config.T);
  const double md = static_cast<double>(config.m);
  const double sqrt_m = std::sqrt(md);
  const double lambda = comp.lambda;
  const double gamma = comp.gamma;
  const bool standard = config.variant == Variant::standard;

  double sum_loss = 0.0, sum_lin = 0.0, min_tele = std::numeric_limits<double>::infinity();
  double max_drift = 0.0, max_lin = 0.0, max_init = 0.0, min_margin = std::numeric_limits<double>::infinity();
  std::size_t max_flips = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    sum_loss += s.inst_loss;
    sum_lin += s.lin_loss;
    if (i + 1 < steps.size()) min_tele = std::min(min_tele, s.telescope_slack);
    max_drift = std::max(max_drift, s.max_drift);
    max_lin = std::max(max_lin, s.lin_loss);
    max_init = std::max(max_init, std::abs(s.init_output));
    min_margin = std::min(min_margin, s.init_margin);
    max_flips = std::max(max_flips, s.flip_count);
  }
  if (steps.size() < 2) min_tele = 0.0;
  // W_T itself is not followed by a step; its drift is in the last trace entry.

  std::string lemma12_block;
  if (!standard) lemma12_block = "inverted variant: the analysis covers standard dropout only";
  else if (!rep.bounds.eta_ok) lemma12_block = "eta > ln 2";
  else if (!competitor_in_ball(comp, config.c) && run.total_projection_hits > 0)
    lemma12_block = "U lies outside the radius-c ball and the projection was active, so Pi_c(U) != U";

  const std::string d_regret = "(1/T) sum L_t(W_t) <= ||W_1-U||^2/(eta T) + (2/T) sum L_t^(t)(U)";
  const std::string d_tele = "||W_{t+1}-U||^2 <= ||W_t-U||^2 - eta L_t + 2 eta L_t^(t)(U), min slack over t<T";
  const std::string d_drift = "max_{t,r} ||w_{r,t}-w_{r,1}|| <= 7 lambda / (2 gamma sqrt(m))";
  const std::string d_lin = "max_t L_t^(t)(U) <= lambda^2 / (2 eta T)";
  if (lemma12_block.empty()) {
    const double lhs = sum_loss / Td;
    const double rhs = run.trajectory.init_dist_sq / (config.eta * Td) + 2.0 * sum_lin / Td;
    rep.checks.push_back(upper("lemma1_regret", d_regret, rhs, lhs, kDeterministicTolerance));
    rep.checks.push_back(upper("lemma1_telescoping", d_tele, 0.0, -min_tele, kDeterministicTolerance));
    rep.checks.push_back(upper("lemma2_drift", d_drift, 7.0 * lambda / (2.0 * gamma * sqrt_m), max_drift));
    rep.checks.push_back(upper("lemma2_linearized_loss", d_lin, lambda * lambda / (2.0 * config.eta * Td), max_lin));
  } else {
    rep.checks.push_back(skipped("lemma1_regret", d_regret, lemma12_block));
    rep.checks.push_back(skipped("lemma1_telescoping", d_tele, lemma12_block));
    rep.checks.push_back(skipped("lemma2_drift", d_drift, lemma12_block));
    rep.checks.push_back(skipped("lemma2_linearized_loss", d_lin, lemma12_block));
  }

  const std::string d_flip = "max_t |R_t| <= m D + sqrt(m ln(3T/delta) / 2), D = observed max drift";
  rep.checks.push_back(upper("lemmaA4_flip_count", d_flip, flip_count_bound(config.m, max_drift, config.T, delta),
                             static_cast<double>(max_flips)));

  const std::string d_init = "max_t |g_t(W_1)| <= sqrt(2 ln(6T/delta))";
  const std::string d_margin = "min_t y_t g_t^(1)(V) >= gamma - sqrt(2 ln(3T/delta) / m)";
  if (standard) {
    auto c = upper("lemmaA6_init_output", d_init, std::sqrt(2.0 * std::log(6.0 * Td / delta)), max_init);
    if (md < 25.0 * std::log(6.0 * Td / delta)) c.note = "width below 25 ln(6T/delta)";
    rep.checks.push_back(c);
    rep.checks.push_back(lower("lemmaA7_margin", d_margin, gamma - std::sqrt(2.0 * std::log(3.0 * Td / delta) / md),
                               min_margin));
  } else {
    rep.checks.push_back(skipped("lemmaA6_init_output", d_init, "inverted variant"));
    rep.checks.push_back(skipped("lemmaA7_margin", d_margin, "inverted variant"));
  }

  const std::string d_worst = "max_t L_t^(t)(U) <= c sqrt(m) / ln 2 + 1";
  if (standard) {
    auto c = upper("lemmaA8_worst_case", d_worst, config.c * sqrt_m / std::numbers::ln2 + 1.0, max_lin,
                   kDeterministicTolerance);
    std::string note;
    if (lambda > sqrt_m) note += "lambda > sqrt(m); ";
    if (max_row_norm(run.trajectory.init) > config.c - 1.0) note += "max ||w_{r,1}|| > c - 1; ";
    if (!note.empty()) c.note = note + "proof assumptions not met, inequality checked directly";
    rep.checks.push_back(c);
  } else {
    rep.checks.push_back(skipped("lemmaA8_worst_case", d_worst, "inverted variant"));
  }
  return rep;
}

LemmaReport aggregate_reports(std::span<const LemmaReport> reports, double delta) {
  if (reports.empty()) throw std::invalid_argument("aggregate_reports: no reports");
  LemmaReport out;
  out.bounds = reports.front().bounds;
  out.preconditions_met = true;
  for (const auto& r : reports) {
    out.preconditions_met = out.preconditions_met && r.preconditions_met;
    if (out.precondition_note.empty()) out.precondition_note = r.precondition_note;
  }
  for (std::size_t k = 0; k < reports.front().checks.size(); ++k) {
    LemmaCheck agg = reports.front().checks[k];
    agg.seeds_passed = 0;
    agg.seeds_total = 0;
    bool have = false;
    for (const auto& r : reports) {
      const LemmaCheck& c = r.check(agg.id);
      if (c.status == CheckStatus::skipped) {
        if (agg.note.empty()) agg.note = c.note;
        continue;
      }
      ++agg.seeds_total;
      agg.seeds_passed += c.status == CheckStatus::passed;
      if (!have || c.slack < agg.slack) {
        agg.bound = c.bound;
        agg.observed = c.observed;
        agg.slack = c.slack;
        if (!c.note.empty()) agg.note = c.note;
        have = true;
      }
    }
    if (agg.seeds_total == 0) {
      agg.status = CheckStatus::skipped;
    } else {
      const auto need = is_deterministic(agg.id)
                            ? agg.seeds_total
                            : static_cast<std::size_t>(std::ceil((1.0 - delta) * static_cast<double>(agg.seeds_total) - 1e-12));
      agg.status = agg.seeds_passed >= need ? CheckStatus::passed : CheckStatus::failed;
    }
    out.checks.push_back(agg);
  }
  return out;
}

void to_json(nlohmann::json& j, const LemmaCheck& c) {
  j = nlohmann::json{{"lemma", c.id},
                     {"description", c.description},
                     {"bound", c.bound},
                     {"observed", c.observed},
                     {"slack", c.slack},
                     {"status", to_string(c.status)},
                     {"pass", c.status == CheckStatus::passed},
                     {"seeds_passed", c.seeds_passed},
                     {"seeds_total", c.seeds_total}};
  if (!c.note.empty()) j["note"] = c.note;
}

void to_json(nlohmann::json& j, const LemmaReport& r) {
  j = nlohmann::json{{"preconditions_met", r.preconditions_met}, {"bounds", r.bounds}, {"checks", r.checks}};
  if (!r.precondition_note.empty()) j["precondition_note"] = r.precondition_note;
}

// ---------------------------------------------------------------------------

std::vector<RiskEstimate> evaluate_risks(const NetworkParams& params, std::span<const DropoutMask* const> masks,
                                         std::span<const Example> sample) {
  if (sample.empty()) throw DomainError("evaluate_risks: empty sample");
  const auto m = params.W.rows();
  const auto d = params.W.cols();
  std::vector<Vector> weights;
  weights.reserve(masks.size());
  for (const DropoutMask* mask : masks) {
    if (!mask) {
      weights.push_back(params.a);
      continue;
    }
    if (static_cast<Eigen::Index>(mask->size()) != m) throw DomainError("evaluate_risks: mask length mismatch");
    Vector w(m);
    for (Eigen::Index r = 0; r < m; ++r) w[r] = mask->bits[static_cast<std::size_t>(r)] ? params.a[r] : 0.0;
    weights.push_back(std::move(w));
  }

  // Small chunks keep the m-wide activation block in cache; the inner
  // dimension d is tiny, so the product is bound by memory traffic.
  constexpr std::size_t kChunk = 64;
  std::vector<std::size_t> errors(masks.size(), 0);
  Matrix X;
  Eigen::MatrixXd H;
  Vector out;
  for (std::size_t begin = 0; begin < sample.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, sample.size() - begin);
    X.resize(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& ex = sample[begin + i];
      if (ex.x.size() != d) throw DomainError("evaluate_risks: example dimension mismatch");
      X.row(static_cast<Eigen::Index>(i)) = ex.x.transpose();
    }
    H.noalias() = X * params.W.transpose();
    H = H.cwiseMax(0.0);
    for (std::size_t k = 0; k < weights.size(); ++k) {
      out.noalias() = H * weights[k];
      for (std::size_t i = 0; i < n; ++i)
        if (sample[begin + i].y * out[static_cast<Eigen::Index>(i)] <= 0.0) ++errors[k];
    }
  }
  std::vector<RiskEstimate> res(masks.size());
  const double nd = static_cast<double>(sample.size());
  for (std::size_t k = 0; k < res.size(); ++k) {
    res[k].samples = sample.size();
    res[k].rate = static_cast<double>(errors[k]) / nd;
    res[k].standard_error = std::sqrt(res[k].rate * (1.0 - res[k].rate) / nd);
  }
  return res;
}

RiskEstimate evaluate_risk(const NetworkParams& params, const DropoutMask* mask, std::span<const Example> sample) {
  const DropoutMask* masks[] = {mask};
  return evaluate_risks(params, masks, sample).front();
}

RiskEstimate estimate_risk(const NetworkParams& params, const DropoutMask* mask, const MarginSpec& spec,
                           RngStream& rng, std::size_t n_mc) {
  if (n_mc == 0) throw DomainError("estimate_risk: n_mc must be >= 1");
  if (spec.kind != DataKind::halfspace)
    throw DomainError("estimate_risk: fresh sampling needs a halfspace spec; use evaluate_risk on a test set");
  const auto sample = sample_halfspace(rng, spec, n_mc);
  return evaluate_risk(params, mask, sample);
}

}  // namespace droplab
