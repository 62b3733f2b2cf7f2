#include "droplab/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace droplab {

std::string to_string(Variant v) { return v == Variant::standard ? "standard" : "inverted"; }

Variant parse_variant(const std::string& s) {
  if (s == "standard") return Variant::standard;
  if (s == "inverted") return Variant::inverted;
  throw DomainError("variant must be 'standard' or 'inverted', got '" + s + "'");
}

void TrainConfig::validate(bool theory_checks) const {
  if (m == 0) throw DomainError("m: width must be >= 1");
  if (d == 0) throw DomainError("d: dimension must be >= 1");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("q: keep-probability must lie in (0, 1]");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw DomainError("eta: learning rate must be > 0");
  if (!(c > 0.0)) throw DomainError("c: max-norm radius must be > 0");
  if (T == 0) throw DomainError("T: iteration count must be >= 1");
  if (snapshot_stride == 0) throw DomainError("snapshot_stride: must be >= 1");
  if (theory_checks && eta > std::numbers::ln2)
    throw DomainError("eta: theory checks require eta in (0, ln 2], got " + format_number(eta));
}

namespace {

// Scales row r onto the radius-c ball if ||w_r||^2 > c^2. The trailing loop
// absorbs rounding so the clipped row passes the same test afterwards.
template <class Row>
bool clip_row(Row&& row, double c) {
  const double c2 = c * c;
  const double n2 = row.squaredNorm();
  if (!(n2 > c2)) return false;
  row *= c / std::sqrt(n2);
  const double shrink = std::nextafter(1.0, 0.0);
  while (row.squaredNorm() > c2) row *= shrink;
  return true;
}

void check_example(const Example& ex, std::size_t d, const char* op) {
  if (static_cast<std::size_t>(ex.x.size()) != d)
    throw DomainError(std::string(op) + ": example dimension " + std::to_string(ex.x.size()) +
                      " does not match d = " + std::to_string(d));
  if (ex.y != 1 && ex.y != -1) throw DomainError(std::string(op) + ": label must be +1 or -1");
}

// Sums of a_r * preact_r over rows with b_r = 1 and preact_r > 0 (the output),
// or over rows with b_r = 1 and gate_r >= 0 of a_r * value_r (linearizations).
double masked_relu_sum(const Vector& a, const DropoutMask& mask, const Vector& pre) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < pre.size(); ++r)
    if (mask.bits[static_cast<std::size_t>(r)] && pre[r] > 0.0) acc += a[r] * pre[r];
  return acc;
}

double gated_sum(const Vector& a, const DropoutMask& mask, const Vector& gate, const Vector& value) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < gate.size(); ++r)
    if (mask.bits[static_cast<std::size_t>(r)] && gate[r] >= 0.0) acc += a[r] * value[r];
  return acc;
}

std::size_t count_flips(const Vector& pre, const Vector& pre_init) {
  std::size_t n = 0;
  for (Eigen::Index r = 0; r < pre.size(); ++r) n += (pre[r] >= 0.0) != (pre_init[r] >= 0.0);
  return n;
}

}  // namespace

Matrix project_maxnorm(Matrix W, double c) {
  project_maxnorm_inplace(W, c);
  return W;
}

std::size_t project_maxnorm_inplace(Matrix& W, double c) {
  if (!(c > 0.0)) throw DomainError("project_maxnorm: radius c must be > 0");
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < W.rows(); ++r) hits += clip_row(W.row(r), c);
  return hits;
}

StepResult dropout_step(const NetworkParams& params, const Example& example, const DropoutMask& mask,
                        double eta, double c, const StepOptions& opts) {
  const std::size_t m = params.width();
  check_example(example, params.dim(), "dropout_step");
  if (mask.size() != m) throw DomainError("dropout_step: mask length does not match width");
  if (static_cast<std::size_t>(params.a.size()) != m) throw DomainError("dropout_step: sign vector length does not match width");
  if (!(c > 0.0)) throw DomainError("dropout_step: radius c must be > 0");
  const Matrix& init = opts.init ? *opts.init : params.W;
  if (init.rows() != params.W.rows() || init.cols() != params.W.cols())
    throw DomainError("dropout_step: reference weights have a different shape");

  const double scale = (opts.variant == Variant::inverted ? 1.0 / mask.q : 1.0) /
                       std::sqrt(static_cast<double>(m));
  const int y = example.y;
  const Vector& x = example.x;
  const Vector pre = params.W * x;
  const Vector pre_init = init * x;

  const double g = scale * masked_relu_sum(params.a, mask, pre);
  const double out_scale = opts.variant == Variant::inverted ? 1.0 : mask.q;

  IterateRecord rec;
  rec.inst_loss = logistic_loss(y * g);
  rec.q_value = logistic_neg_deriv(y * g);
  rec.sub_output = y * g;
  rec.full_output = y * out_scale * forward_from_preact(params.a, nullptr, pre);
  rec.max_drift = max_row_norm(params.W - init);
  rec.flip_count = count_flips(pre, pre_init);
  rec.active_neurons = mask.active();

  // grad L = l'(y g) y grad g, and -l' = Q.
  StepResult out{params, rec};
  const double coef = eta * rec.q_value * y * scale;
  for (Eigen::Index r = 0; r < out.params.W.rows(); ++r)
    if (mask.bits[static_cast<std::size_t>(r)] && pre[r] >= 0.0) out.params.W.row(r) += (coef * params.a[r]) * x.transpose();
  out.record.projection_hits = project_maxnorm_inplace(out.params.W, c);
  return out;
}

InitResult initialize(const TrainConfig& config, std::size_t* attempts) {
  RngStream rng(config.seed, streams::init);
  const double bound = std::sqrt(static_cast<double>(config.d)) +
                       2.0 * std::sqrt(std::log(static_cast<double>(config.m)));
  constexpr std::size_t kMaxAttempts = 10000;
  for (std::size_t k = 1; k <= kMaxAttempts; ++k) {
    InitResult init = init_network(rng, config.m, config.d);
    if (!config.enforce_init_bound || init.max_row_norm <= bound) {
      if (attempts) *attempts = k;
      return init;
    }
  }
  throw std::runtime_error("initialize: no draw met max_r ||w_r|| <= sqrt(d) + 2 sqrt(ln m) in 10000 attempts");
}

TrainResult train(const TrainConfig& config, ExampleSource& data, const CompetitorFactory& make_competitor,
                  const IterateObserver& observer) {
  config.validate();
  std::size_t attempts = 1;
  InitResult init = initialize(config, &attempts);
  std::optional<Competitor> comp;
  if (make_competitor) comp = make_competitor(init.params);
  TrainResult out = train_from(config, init.params, data, comp ? &*comp : nullptr, observer);
  out.init_attempts = attempts;
  return out;
}

TrainResult train_from(const TrainConfig& config, const NetworkParams& init, ExampleSource& data,
                       const Competitor* competitor, const IterateObserver& observer) {
  config.validate();
  const std::size_t m = config.m;
  const auto mi = static_cast<Eigen::Index>(m);
  if (init.width() != m || init.dim() != config.d || init.a.size() != mi)
    throw DomainError("train: initial weights do not match (m, d) of the config");
  if (competitor && (competitor->U.rows() != mi || competitor->U.cols() != init.W.cols() ||
                     competitor->V.rows() != mi || competitor->V.cols() != init.W.cols()))
    throw DomainError("train: competitor shape does not match the network");

  RngStream mask_rng(config.seed, streams::masks);
  const double scale = config.mask_scale() / std::sqrt(static_cast<double>(m));
  const double out_scale = config.variant == Variant::inverted ? 1.0 : config.q;
  const double eta = config.eta;
  const double c = config.c;

  TrainResult res;
  res.initial = init;
  res.trajectory.init = init.W;
  res.trajectory.steps.reserve(config.T);
  if (competitor) res.competitor = *competitor;

  Matrix W = init.W;
  const Matrix& W1 = init.W;
  const Vector& a = init.a;

  // Row caches, updated only for rows that change.
  std::vector<double> norm2(m), drift2(m, 0.0), dist2;
  for (std::size_t r = 0; r < m; ++r) norm2[r] = W.row(static_cast<Eigen::Index>(r)).squaredNorm();
  if (competitor) {
    dist2.resize(m);
    for (std::size_t r = 0; r < m; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      dist2[r] = (W.row(ri) - competitor->U.row(ri)).squaredNorm();
    }
  }
  auto total = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return s;
  };
  if (competitor) res.trajectory.init_dist_sq = total(dist2);

  double sum_loss = 0.0, sum_lin = 0.0;
  std::vector<std::size_t> touched;
  touched.reserve(m);
  std::vector<std::uint8_t> changed(m, 0);

  for (std::size_t t = 1; t <= config.T; ++t) {
    std::optional<Example> next = data.next();
    if (!next)
      throw std::runtime_error("train: data stream exhausted at iteration " + std::to_string(t) + " of " +
                               std::to_string(config.T));
    const Example& ex = *next;
    check_example(ex, config.d, "train");
    const DropoutMask mask = sample_mask(mask_rng, m, config.q);
    if (observer) observer(IterateView{t, W, mask, ex});

    const int y = ex.y;
    const Vector pre = W * ex.x;
    const Vector pre1 = W1 * ex.x;

    const double g = scale * masked_relu_sum(a, mask, pre);
    StepTrace st;
    st.inst_loss = logistic_loss(y * g);
    st.q_value = logistic_neg_deriv(y * g);
    st.max_drift = std::sqrt(*std::max_element(drift2.begin(), drift2.end()));
    st.flip_count = count_flips(pre, pre1);
    st.active_neurons = mask.active();
    st.init_output = scale * masked_relu_sum(a, mask, pre1);
    if (competitor) {
      const Vector ux = competitor->U * ex.x;
      const Vector vx = competitor->V * ex.x;
      st.lin_loss = logistic_loss(y * scale * gated_sum(a, mask, pre, ux));
      st.init_margin = y * scale * gated_sum(a, mask, pre1, vx);
      sum_lin += st.lin_loss;
    }
    sum_loss += st.inst_loss;

    const bool record = t == 1 || t % config.snapshot_stride == 0 || t == config.T;
    if (record) {
      IterateRecord rec;
      rec.t = t;
      rec.inst_loss = st.inst_loss;
      rec.q_value = st.q_value;
      rec.sub_output = y * g;
      rec.full_output = y * out_scale * forward_from_preact(a, nullptr, pre);
      rec.max_drift = st.max_drift;
      rec.flip_count = st.flip_count;
      rec.active_neurons = st.active_neurons;
      res.records.push_back(rec);
      if (config.keep_snapshots || t == config.T) res.trajectory.snapshots.push_back(Snapshot{t, W, mask});
    }

    if (t < config.T) {
      touched.clear();
      const double coef = eta * st.q_value * y * scale;
      for (std::size_t r = 0; r < m; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        if (mask.bits[r] && pre[ri] >= 0.0) {
          W.row(ri) += (coef * a[ri]) * ex.x.transpose();
          touched.push_back(r);
        }
      }
      st.half_step_norm = std::abs(coef) * std::sqrt(static_cast<double>(touched.size())) * ex.x.norm();
      for (std::size_t r : touched) {
        norm2[r] = W.row(static_cast<Eigen::Index>(r)).squaredNorm();
        changed[r] = 1;
      }

      // Untouched rows keep their cached norm, so this equals projecting all rows.
      const double c2 = c * c;
      for (std::size_t r = 0; r < m; ++r) {
        if (!(norm2[r] > c2)) continue;
        const auto ri = static_cast<Eigen::Index>(r);
        clip_row(W.row(ri), c);
        norm2[r] = W.row(ri).squaredNorm();
        ++st.projection_hits;
        if (!changed[r]) {
          changed[r] = 1;
          touched.push_back(r);
        }
      }
      double dist_delta = 0.0;
      for (std::size_t r : touched) {
        const auto ri = static_cast<Eigen::Index>(r);
        changed[r] = 0;
        drift2[r] = (W.row(ri) - W1.row(ri)).squaredNorm();
        if (competitor) {
          const double nd = (W.row(ri) - competitor->U.row(ri)).squaredNorm();
          dist_delta += nd - dist2[r];
          dist2[r] = nd;
        }
      }
      res.total_projection_hits += st.projection_hits;
      if (competitor) {
        // ||W_t - U||^2 - eta L + 2 eta L^(t)(U) - ||W_{t+1} - U||^2
        st.telescope_slack = -dist_delta - eta * st.inst_loss + 2.0 * eta * st.lin_loss;
      }
    }
    if (competitor) {
      const double td = static_cast<double>(t);
      st.regret_slack = (res.trajectory.init_dist_sq / (eta * td) + 2.0 * sum_lin / td) - sum_loss / td;
    }
    if (record) {
      auto& rec = res.records.back();
      rec.projection_hits = st.projection_hits;
      rec.lemma1_slack = st.regret_slack;
      rec.lemma2_linloss = st.lin_loss;
    }
    res.trajectory.steps.push_back(st);
  }

  res.final_params = NetworkParams{W, a};
  res.rescaled = NetworkParams{config.variant == Variant::inverted ? W : Matrix(config.q * W), a};
  return res;
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return {};
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string metrics_row(const IterateRecord& rec) {
  std::string s = std::to_string(rec.t);
  for (double v : {rec.inst_loss, rec.q_value, rec.sub_output, rec.full_output, rec.max_drift}) {
    s += ',';
    s += format_number(v);
  }
  for (std::size_t v : {rec.flip_count, rec.active_neurons, rec.projection_hits}) {
    s += ',';
    s += std::to_string(v);
  }
  s += ',';
  s += format_number(rec.lemma1_slack);
  s += ',';
  s += format_number(rec.lemma2_linloss);
  return s;
}

void write_metrics_csv(std::ostream& out, const std::vector<IterateRecord>& records) {
  out << kMetricsHeader << '\n';
  for (const auto& rec : records) out << metrics_row(rec) << '\n';
}

}  // namespace droplab
