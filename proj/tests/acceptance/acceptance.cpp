// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 on any
// failure. Thresholds are fixed here and must not be tuned to the results.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "droplab/experiment.hpp"
#include "droplab/theory.hpp"
#include "droplab/trainer.hpp"

using namespace droplab;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// The reference configuration: d = 20, halfspace gamma0 = 0.5, eta = 0.5,
// c and lambda from the bound calculator.
constexpr std::size_t kD = 20;
constexpr double kGamma0 = 0.5;
constexpr double kEta = 0.5;
constexpr double kDelta = 0.05;

TrainConfig reference_config(std::size_t m, double q, std::size_t T, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.m = m;
  cfg.d = kD;
  cfg.q = q;
  cfg.eta = kEta;
  cfg.T = T;
  cfg.seed = seed;
  cfg.c = compute_bounds(q * kGamma0 / 2.0, kEta, T, m, kD, kDelta).c;
  cfg.snapshot_stride = std::max<std::size_t>(1, T / 200);
  cfg.keep_snapshots = false;
  return cfg;
}

TrainResult reference_run(const TrainConfig& cfg, const IterateObserver& obs = {}) {
  const auto spec = make_halfspace_spec(kD, kGamma0, cfg.q);
  const double lambda = compute_bounds(certified_margin(spec), cfg.eta, cfg.T, cfg.m, cfg.d, kDelta).lambda;
  HalfspaceSource src(spec, RngStream(cfg.seed, streams::data));
  return train(cfg, src, [&](const NetworkParams& init) { return build_competitor(init, spec, lambda); }, obs);
}

std::vector<Example> test_set(std::uint64_t seed, double q, std::size_t n) {
  RngStream rng(seed, streams::test_data);
  return sample_halfspace(rng, make_halfspace_spec(kD, kGamma0, q), n);
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = Clock::now();
  RngStream rng(101, streams::monte_carlo);
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t m = 1 + rng.engine()() % 64, d = 1 + rng.engine()() % 16;
    const auto p = init_network(rng, m, d).params;
    const Vector x = sample_unit_sphere(rng, d);
    const auto mask = sample_mask(rng, m, 0.2 + 0.8 * rng.uniform());
    const Matrix G = grad_sub(p, mask, x);
    const Vector pre = p.W * x;
    double num = 0.0, den = 0.0;
    NetworkParams q = p;
    for (std::size_t r = 0; r < m; ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      if (std::abs(pre[ri]) <= 1e-3) continue;
      for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
        const double w = p.W(ri, j);
        q.W(ri, j) = w + h;
        const double up = forward_sub(q, mask, x);
        q.W(ri, j) = w - h;
        const double dn = forward_sub(q, mask, x);
        q.W(ri, j) = w;
        const double fd = (up - dn) / (2.0 * h);
        num += (fd - G(ri, j)) * (fd - G(ri, j));
        den += G(ri, j) * G(ri, j);
      }
    }
    if (den > 0.0) worst = std::max(worst, std::sqrt(num / den));
    else worst = std::max(worst, std::sqrt(num));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 10.0,
          "max relative error " + fmt(worst, 3) + " (limit 1e-6), " + fmt(secs, 3) + " s (limit 10 s)"};
}

Outcome exact_identities() {
  RngStream rng(102, streams::monte_carlo);
  double worst_hom = 0.0, worst_proj = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t m = 1 + rng.engine()() % 128, d = 1 + rng.engine()() % 32;
    auto p = init_network(rng, m, d).params;
    p.W *= 0.5 + 2.0 * rng.uniform();
    const Vector x = sample_unit_sphere(rng, d);
    const auto mask = sample_mask(rng, m, rng.uniform());
    worst_hom = std::max(worst_hom, std::abs(frobenius_dot(grad_sub(p, mask, x), p.W) - forward_sub(p, mask, x)));
    const double c = 0.2 + 6.0 * rng.uniform();
    const Matrix once = project_maxnorm(p.W, c);
    worst_proj = std::max(worst_proj, (project_maxnorm(once, c) - once).cwiseAbs().maxCoeff());
  }
  return {worst_hom <= 1e-12 && worst_proj <= 1e-12,
          "max |<grad g, W> - g| = " + fmt(worst_hom, 3) + ", max |P(P(W)) - P(W)| = " + fmt(worst_proj, 3)};
}

struct ReferenceRuns {
  std::vector<TrainResult> runs;
  TrainConfig cfg;
  double seconds = 0.0;
};

ReferenceRuns twenty_runs() {
  ReferenceRuns out;
  out.cfg = reference_config(4096, 0.5, 2000, 1);
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto cfg = out.cfg;
    cfg.seed = seed;
    out.runs.push_back(reference_run(cfg));
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome lemma1_regret(const ReferenceRuns& ref) {
  std::size_t held = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  for (const auto& run : ref.runs) {
    const auto rep = verify_lemmas(run, ref.cfg, kDelta);
    const auto& c = rep.check("lemma1_regret");
    if (c.status == CheckStatus::skipped) return {false, "regret check skipped: " + c.note};
    min_slack = std::min(min_slack, c.slack);
    held += c.slack >= -1e-9;
  }
  return {held == ref.runs.size() && ref.seconds < 120.0,
          std::to_string(held) + "/20 runs hold, min slack " + fmt(min_slack, 6) + ", training " +
              fmt(ref.seconds, 3) + " s (limit 120 s)"};
}

Outcome lemmaA8_cap(const ReferenceRuns& ref) {
  const double cap = ref.cfg.c * std::sqrt(static_cast<double>(ref.cfg.m)) / std::numbers::ln2 + 1.0;
  std::size_t violations = 0, steps = 0;
  double worst = 0.0;
  for (const auto& run : ref.runs)
    for (const auto& s : run.trajectory.steps) {
      ++steps;
      worst = std::max(worst, s.lin_loss);
      violations += !(s.lin_loss <= cap);
    }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(steps) +
                               " steps, max linearized loss " + fmt(worst, 4) + " vs cap " + fmt(cap, 6)};
}

Outcome lazy_scaling() {
  const std::vector<std::size_t> widths{256, 1024, 4096, 16384};
  std::vector<double> drift_scaled, flip_frac;
  for (auto m : widths) {
    std::vector<double> ds, ff;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto cfg = reference_config(m, 0.5, 1000, seed);
      const auto spec = make_halfspace_spec(kD, kGamma0, cfg.q);
      HalfspaceSource src(spec, RngStream(seed, streams::data));
      const auto run = train(cfg, src);
      double drift = 0.0;
      for (const auto& s : run.trajectory.steps) drift = std::max(drift, s.max_drift);
      ds.push_back(drift * std::sqrt(static_cast<double>(m)));
      ff.push_back(static_cast<double>(run.trajectory.steps.back().flip_count) / static_cast<double>(m));
    }
    drift_scaled.push_back(mean(ds));
    flip_frac.push_back(mean(ff));
  }
  const double spread = *std::max_element(drift_scaled.begin(), drift_scaled.end()) /
                        *std::min_element(drift_scaled.begin(), drift_scaled.end());
  bool monotone = true;
  for (std::size_t i = 1; i < flip_frac.size(); ++i) monotone = monotone && flip_frac[i] < flip_frac[i - 1];
  std::string detail = "drift*sqrt(m) =";
  for (double v : drift_scaled) detail += " " + fmt(v);
  detail += " (spread " + fmt(spread, 3) + "x, limit 4x); flip fraction at T =";
  for (double v : flip_frac) detail += " " + fmt(v, 3);
  return {spread < 4.0 && monotone, detail};
}

Outcome jensen_scaling() {
  RngStream rng(106, streams::monte_carlo);
  int passes = 0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t m = 4 + rng.engine()() % 60, d = 2 + rng.engine()() % 14;
    const auto p = init_network(rng, m, d).params;
    const Vector x = sample_unit_sphere(rng, d);
    const int y = rng.sign() > 0 ? 1 : -1;
    const double q = 0.1 + 0.9 * rng.uniform();
    NetworkParams scaled = p;
    scaled.W *= q;
    const double lhs = logistic_loss(y * forward_full(scaled, x));
    double s = 0.0, s2 = 0.0;
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = logistic_loss(y * forward_sub(p, sample_mask(rng, m, q), x));
      s += l;
      s2 += l * l;
    }
    passes += lhs <= s / static_cast<double>(n) + 3.0 * standard_error(s, s2, n);
  }
  return {passes >= 99, std::to_string(passes) + "/100 triples satisfy the bound (need 99)"};
}

Outcome anti_concentration() {
  RngStream rng(107, streams::monte_carlo);
  const Vector x = sample_unit_sphere(rng, kD);
  bool ok = true;
  std::string detail;
  for (double D : {0.01, 0.05, 0.1}) {
    const auto p = small_ball_probability(rng, x, D, 1000000);
    const double bound = 2.0 * D / std::sqrt(2.0 * std::numbers::pi);
    ok = ok && p.value <= bound + 3.0 * p.standard_error;
    detail += "D=" + fmt(D, 2) + ": " + fmt(p.value, 5) + " <= " + fmt(bound, 5) + " + 3*" + fmt(p.standard_error, 2) + "; ";
  }
  return {ok, detail};
}

// Trains the reference configuration and hands (t, W_t, B_t, a) to `visit`.
void run_with_view(const TrainConfig& cfg, const std::function<void(const IterateView&, const NetworkParams&)>& visit) {
  const auto spec = make_halfspace_spec(kD, kGamma0, cfg.q);
  const auto init = initialize(cfg);
  NetworkParams view{Matrix(), init.params.a};
  HalfspaceSource src(spec, RngStream(cfg.seed, streams::data));
  train_from(cfg, init.params, src, nullptr, [&](const IterateView& it) {
    view.W = it.W;
    visit(it, view);
  });
}

Outcome convergence_trend() {
  // Risk of q W_t averaged over iterates, sampled at t = 1, 11, 21, ... The
  // samples with t <= 200 are exactly those of a T = 200 run, because the
  // trajectory up to t does not depend on T.
  constexpr std::size_t stride = 10;
  std::vector<double> avg200, avg2000, final_iterate;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto cfg = reference_config(4096, 0.5, 2000, seed);
    const auto test = test_set(seed, cfg.q, 2000);
    double s200 = 0.0, s2000 = 0.0;
    std::size_t n200 = 0, n2000 = 0;
    run_with_view(cfg, [&](const IterateView& it, const NetworkParams& p) {
      const bool sampled = (it.t - 1) % stride == 0;
      if (!sampled && it.t != cfg.T) return;
      // sign f(x; q W) = sign f(x; W), so W_t gives the risk of q W_t
      const double r = evaluate_risk(p, nullptr, test).rate;
      if (it.t == cfg.T) final_iterate.push_back(r);
      if (!sampled) return;
      s2000 += r;
      ++n2000;
      if (it.t <= 200) {
        s200 += r;
        ++n200;
      }
    });
    avg200.push_back(s200 / static_cast<double>(n200));
    avg2000.push_back(s2000 / static_cast<double>(n2000));
  }
  const double a200 = mean(avg200), a2000 = mean(avg2000);
  const double ratio = a200 / a2000;
  return {ratio >= 5.0 && a2000 <= 0.05,
          "iterate-averaged risk T=200: " + fmt(a200) + ", T=2000: " + fmt(a2000) + " (drop " + fmt(ratio, 3) +
              "x, need >= 5x; need final <= 0.05); last-iterate risk " + fmt(mean(final_iterate))};
}

struct FinalRisks {
  double full = 0.0;
  double visited = 0.0;
  std::vector<double> random;  // one per fresh mask
};

FinalRisks risks_at_T(const TrainConfig& cfg, std::size_t n_mc, std::size_t n_random_masks) {
  const auto test = test_set(cfg.seed, cfg.q, n_mc);
  std::vector<DropoutMask> fresh;
  RngStream mrng(cfg.seed, streams::random_masks);
  for (std::size_t k = 0; k < n_random_masks; ++k) fresh.push_back(sample_mask(mrng, cfg.m, cfg.q));
  FinalRisks out;
  run_with_view(cfg, [&](const IterateView& it, const NetworkParams& p) {
    if (it.t != cfg.T) return;
    std::vector<const DropoutMask*> masks{nullptr, &it.mask};
    for (const auto& f : fresh) masks.push_back(&f);
    const auto r = evaluate_risks(p, masks, test);
    out.full = r[0].rate;
    out.visited = r[1].rate;
    for (std::size_t k = 2; k < r.size(); ++k) out.random.push_back(r[k].rate);
  });
  return out;
}

Outcome compression() {
  // gap = |R(W_T; B_T) - R(q W_T)|, mean over 5 seeds
  double gap[2] = {0.0, 0.0}, full4096 = 0.0, visited4096 = 0.0;
  const std::size_t widths[2] = {64, 4096};
  for (int w = 0; w < 2; ++w)
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = risks_at_T(reference_config(widths[w], 0.5, 2000, seed), 10000, 0);
      gap[w] += std::abs(r.visited - r.full) / 5.0;
      if (w == 1) {
        full4096 += r.full / 5.0;
        visited4096 += r.visited / 5.0;
      }
    }
  return {gap[1] <= 0.02 && gap[0] > gap[1],
          "m=4096: visited " + fmt(visited4096) + " vs full " + fmt(full4096) + ", gap " + fmt(gap[1], 3) +
              " (limit 0.02); m=64 gap " + fmt(gap[0], 3)};
}

Outcome random_subnetworks() {
  const std::vector<std::size_t> widths{64, 1024, 4096};
  std::vector<double> deficit;
  for (auto m : widths) {
    double d = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto r = risks_at_T(reference_config(m, 0.2, 2000, seed), 10000, 100);
      d += (mean(r.random) - r.full) / 5.0;
    }
    deficit.push_back(d);
  }
  const bool ok = deficit[0] > deficit[1] && deficit[1] > deficit[2];
  return {ok, "mean random-mask risk minus full risk at q=0.2: m=64 " + fmt(deficit[0]) + ", m=1024 " +
                  fmt(deficit[1]) + ", m=4096 " + fmt(deficit[2])};
}

Outcome active_width(const ReferenceRuns& ref) {
  const double m = static_cast<double>(ref.cfg.m);
  const double limit = ref.cfg.q * m + std::sqrt(2.0 * m * std::log(static_cast<double>(ref.cfg.T) / 0.05));
  std::size_t over = 0, total = 0, widest = 0;
  for (const auto& run : ref.runs)
    for (const auto& s : run.trajectory.steps) {
      ++total;
      widest = std::max(widest, s.active_neurons);
      over += static_cast<double>(s.active_neurons) > limit;
    }
  const double frac = static_cast<double>(over) / static_cast<double>(total);
  return {frac <= 0.05, "fraction above qm + sqrt(2m ln(T/0.05)) = " + fmt(limit, 6) + ": " + fmt(frac, 3) +
                            " (limit 0.05), widest " + std::to_string(widest)};
}

Outcome determinism() {
  const auto root = fs::temp_directory_path() / "droplab_acceptance_determinism";
  fs::remove_all(root);
  const std::string base =
      "name = reference\nm = 4096\nq = 0.5\nd = 20\nT = 2000\neta = 0.5\ndata = halfspace\ngamma0 = 0.5\n"
      "n_seeds = 2\nn_mc = 1000\nn_random_masks = 5\n";
  std::vector<std::string> files[2];
  std::vector<std::string> bytes[2];
  for (int k = 0; k < 2; ++k) {
    auto spec = parse_config(base + "output_dir = " + (root / std::to_string(k)).string() + "\n");
    run_experiment(spec);
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(spec.cell_dir()))
      if (e.path().extension() == ".csv") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
      std::ifstream f(p, std::ios::binary);
      std::stringstream ss;
      ss << f.rdbuf();
      files[k].push_back(p.filename().string());
      bytes[k].push_back(ss.str());
    }
  }
  fs::remove_all(root);
  const bool same = !files[0].empty() && files[0] == files[1] && bytes[0] == bytes[1];
  return {same, std::to_string(files[0].size()) + " CSV files compared, " + (same ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << std::setw(2) << id << " " << std::left << std::setw(28) << name << std::right
              << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << fmt(seconds_since(t0), 3) << " s]"
              << std::endl;
  };

  report(1, "gradient correctness", gradient_check);
  report(2, "exact identities", exact_identities);

  ReferenceRuns ref;
  bool have_ref = false;
  auto need_ref = [&]() -> const ReferenceRuns& {
    if (!have_ref) {
      ref = twenty_runs();
      have_ref = true;
    }
    return ref;
  };
  report(3, "lemma 1 regret", [&] { return lemma1_regret(need_ref()); });
  report(4, "worst-case linearized loss", [&] { return lemmaA8_cap(need_ref()); });
  report(5, "lazy-regime scaling", lazy_scaling);
  report(6, "jensen / scaling", jensen_scaling);
  report(7, "anti-concentration", anti_concentration);
  report(8, "convergence trend", convergence_trend);
  report(9, "compression", compression);
  report(10, "random sub-networks", random_subnetworks);
  report(11, "active width", [&] { return active_width(need_ref()); });
  report(12, "determinism", determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
