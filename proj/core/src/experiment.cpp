#include "droplab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace droplab {

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string s = "invalid experiment config:";
  for (const auto& p : v) s += "\n  " + p;
  return s;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto p = s.find(',');
    out.push_back(trim(s.substr(0, p)));
    if (p == std::string_view::npos) break;
    s.remove_prefix(p + 1);
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if constexpr (std::is_unsigned_v<T>) {
    if (s.front() == '-' || s.front() == '+') return false;
  }
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

// Accepts integers written as 1e4 as well.
bool parse_count(std::string_view s, std::size_t& out) {
  if (parse_number(s, out)) return true;
  double v = 0.0;
  if (!parse_number(s, v) || !(v >= 0.0) || v > 1e15 || v != std::floor(v)) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string q_label(double q) { return format_number(q); }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_lines(problems)), problems_(std::move(problems)) {}

void ExperimentSpec::validate() const {
  std::vector<std::string> bad;
  if (name.empty() || name.find_first_of("/\\") != std::string::npos)
    bad.push_back("name: must be non-empty and contain no path separators");
  if (widths.empty()) bad.push_back("m: at least one width required");
  for (auto m : widths)
    if (m == 0) bad.push_back("m: widths must be >= 1");
  if (keep_probs.empty()) bad.push_back("q: at least one keep probability required");
  for (double q : keep_probs)
    if (!(q > 0.0 && q <= 1.0)) bad.push_back("q: keep probability must lie in (0, 1], got " + format_number(q));
  if (data == DataSource::halfspace && d == 0) bad.push_back("d: required and >= 1 for halfspace data");
  if (T == 0) bad.push_back("T: must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) bad.push_back("eta: must be a finite value > 0");
  if (theory_checks && eta > std::numbers::ln2)
    bad.push_back("eta: must lie in (0, ln 2] when theory_checks is on (learning-rate range of the convergence theorem), got " +
                  format_number(eta));
  if (c && !(*c > 0.0)) bad.push_back("c: must be > 0");
  if (n_seeds == 0) bad.push_back("n_seeds: must be >= 1");
  if (snapshot_stride == 0) bad.push_back("snapshot_stride: must be >= 1");
  if (eval_stride == 0) bad.push_back("eval_stride: must be >= 1");
  else if (snapshot_stride > 0 && eval_stride % snapshot_stride != 0)
    bad.push_back("eval_stride: must be a multiple of snapshot_stride");
  if (!(delta > 0.0 && delta < 1.0)) bad.push_back("delta: must lie in (0, 1)");
  if (n_mc == 0) bad.push_back("n_mc: must be >= 1");
  if (data == DataSource::halfspace && !(gamma0 > 0.0 && gamma0 <= 0.999))
    bad.push_back("gamma0: must lie in (0, 0.999] for halfspace data");
  if (data == DataSource::mnist) {
    if (mnist_dir.empty()) bad.push_back("mnist_dir: required for data = mnist");
    if (digit_pos < 0 || digit_pos > 9) bad.push_back("digit_pos: must lie in 0..9");
    if (digit_neg < 0 || digit_neg > 9) bad.push_back("digit_neg: must lie in 0..9");
    if (digit_pos == digit_neg) bad.push_back("digit_pos: must differ from digit_neg");
  }
  if (data == DataSource::file && data_path.empty()) bad.push_back("data_path: required for data = file");
  if (!bad.empty()) throw ConfigError(std::move(bad));
}

ExperimentSpec parse_config(std::string_view text) {
  ExperimentSpec spec;
  std::vector<std::string> bad;
  std::set<std::string> seen;
  bool have_stride = false, have_eval = false, have_q = false;

  auto expect_count = [&](const std::string& key, std::string_view v, std::size_t& out) {
    if (!parse_count(v, out)) bad.push_back(key + ": expected a non-negative integer, got '" + std::string(v) + "'");
  };
  auto expect_real = [&](const std::string& key, std::string_view v, double& out) {
    if (!parse_number(v, out)) bad.push_back(key + ": expected a number, got '" + std::string(v) + "'");
  };
  auto expect_bool = [&](const std::string& key, std::string_view v, bool& out) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") out = true;
    else if (v == "false" || v == "0" || v == "no" || v == "off") out = false;
    else bad.push_back(key + ": expected true or false, got '" + std::string(v) + "'");
  };
  auto expect_digit = [&](const std::string& key, std::string_view v, int& out) {
    if (!parse_number(v, out)) bad.push_back(key + ": expected an integer, got '" + std::string(v) + "'");
  };

  std::size_t lineno = 0;
  std::string_view rest = text;
  while (!rest.empty()) {
    ++lineno;
    const auto nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    if (const auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      bad.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      bad.push_back(key + ": given more than once");
      continue;
    }
    if (val.empty()) {
      bad.push_back(key + ": empty value");
      continue;
    }

    if (key == "name") {
      spec.name = std::string(val);
    } else if (key == "m") {
      for (auto item : split_list(val)) {
        std::size_t m = 0;
        expect_count(key, item, m);
        spec.widths.push_back(m);
      }
    } else if (key == "q" || key == "dropout_rate") {
      if (have_q) {
        bad.push_back(key + ": give either q or dropout_rate, not both");
        continue;
      }
      have_q = true;
      for (auto item : split_list(val)) {
        double v = 0.0;
        expect_real(key, item, v);
        if (key == "dropout_rate" && !(v >= 0.0 && v < 1.0))
          bad.push_back("dropout_rate: must lie in [0, 1), got '" + std::string(item) + "'");
        spec.keep_probs.push_back(key == "q" ? v : 1.0 - v);
      }
    } else if (key == "d") {
      expect_count(key, val, spec.d);
    } else if (key == "T") {
      expect_count(key, val, spec.T);
    } else if (key == "eta") {
      expect_real(key, val, spec.eta);
    } else if (key == "c") {
      double c = 0.0;
      expect_real(key, val, c);
      spec.c = c;
    } else if (key == "seed") {
      std::size_t s = 0;
      expect_count(key, val, s);
      spec.seed = s;
    } else if (key == "n_seeds") {
      expect_count(key, val, spec.n_seeds);
    } else if (key == "variant") {
      try {
        spec.variant = parse_variant(std::string(val));
      } catch (const std::exception&) {
        bad.push_back("variant: expected standard or inverted, got '" + std::string(val) + "'");
      }
    } else if (key == "snapshot_stride") {
      expect_count(key, val, spec.snapshot_stride);
      have_stride = true;
    } else if (key == "eval_stride") {
      expect_count(key, val, spec.eval_stride);
      have_eval = true;
    } else if (key == "delta") {
      expect_real(key, val, spec.delta);
    } else if (key == "n_mc") {
      expect_count(key, val, spec.n_mc);
    } else if (key == "n_random_masks") {
      expect_count(key, val, spec.n_random_masks);
    } else if (key == "data") {
      if (val == "halfspace") spec.data = DataSource::halfspace;
      else if (val == "mnist") spec.data = DataSource::mnist;
      else if (val == "file") spec.data = DataSource::file;
      else bad.push_back("data: expected halfspace, mnist or file, got '" + std::string(val) + "'");
    } else if (key == "gamma0") {
      expect_real(key, val, spec.gamma0);
    } else if (key == "mnist_dir") {
      spec.mnist_dir = std::string(val);
    } else if (key == "digit_pos") {
      expect_digit(key, val, spec.digit_pos);
    } else if (key == "digit_neg") {
      expect_digit(key, val, spec.digit_neg);
    } else if (key == "data_path") {
      spec.data_path = std::string(val);
    } else if (key == "theory_checks") {
      expect_bool(key, val, spec.theory_checks);
    } else if (key == "output_dir") {
      spec.output_dir = std::string(val);
    } else if (key == "checkpoint_stride") {
      expect_count(key, val, spec.checkpoint_stride);
    } else if (key == "threads") {
      expect_count(key, val, spec.threads);
    } else {
      bad.push_back(key + ": unknown key");
    }
  }

  for (const char* req : {"m", "T", "eta"})
    if (!seen.count(req)) bad.push_back(std::string(req) + ": required key missing");
  if (!have_q) bad.push_back("q: required key missing (or give dropout_rate)");
  if (!bad.empty()) throw ConfigError(std::move(bad));

  if (!have_stride) spec.snapshot_stride = std::max<std::size_t>(1, spec.T / 200);
  if (!have_eval) {
    const std::size_t s = spec.snapshot_stride;
    spec.eval_stride = s * std::max<std::size_t>(1, spec.T / 20 / s);
  }
  spec.validate();
  return spec;
}

ExperimentSpec load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string cell_file_name(const CellKey& key) {
  return "cell_m" + std::to_string(key.m) + "_q" + q_label(key.q) + "_s" + std::to_string(key.seed) + ".csv";
}

// ---------------------------------------------------------------------------

LoadedData load_data(const ExperimentSpec& spec, const WarningSink& warn) {
  LoadedData out;
  auto hold_out = [&out] {
    const std::size_t n = out.train.size();
    const std::size_t k = std::max<std::size_t>(1, n / 5);
    if (n < 2) throw std::runtime_error("dataset needs at least two examples to hold one out");
    out.test.assign(out.train.end() - static_cast<std::ptrdiff_t>(k), out.train.end());
    out.train.resize(n - k);
  };
  switch (spec.data) {
    case DataSource::halfspace:
      return out;
    case DataSource::mnist: {
      out.train = load_mnist_binary(spec.mnist_dir, spec.digit_pos, spec.digit_neg, "train", warn).examples;
      if (std::filesystem::exists(spec.mnist_dir / "t10k-images-idx3-ubyte"))
        out.test = load_mnist_binary(spec.mnist_dir, spec.digit_pos, spec.digit_neg, "t10k", warn).examples;
      else
        hold_out();
      break;
    }
    case DataSource::file:
      out.train = load_examples(spec.data_path);
      hold_out();
      break;
  }
  if (out.train.empty()) throw std::runtime_error("dataset is empty");
  return out;
}

namespace {

struct CellData {
  MarginSpec margin;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  std::vector<Example> test;
  std::unique_ptr<ExampleSource> source;
  std::size_t d = 0;
};

CellData prepare_cell_data(const ExperimentSpec& spec, const CellKey& key, const LoadedData& data) {
  CellData cd;
  if (spec.data == DataSource::halfspace) {
    cd.d = spec.d;
    cd.margin = make_halfspace_spec(spec.d, spec.gamma0, key.q);
    cd.gamma = certified_margin(cd.margin);
    RngStream test_rng(key.seed, streams::test_data);
    cd.test = sample_halfspace(test_rng, cd.margin, spec.n_mc);
    cd.source = std::make_unique<HalfspaceSource>(cd.margin, RngStream(key.seed, streams::data));
    return cd;
  }

  cd.d = static_cast<std::size_t>(data.train.front().x.size());
  if (spec.d != 0 && spec.d != cd.d)
    throw ConfigError({"d: config says " + std::to_string(spec.d) + " but the data has dimension " + std::to_string(cd.d)});
  if (data.train.size() < spec.T)
    throw ConfigError({"T: " + std::to_string(spec.T) + " exceeds the " + std::to_string(data.train.size()) +
                       " training examples (one pass, each example used once)"});
  // Constant feature map along the class-mean direction. For a constant map the
  // tangent-feature expectation is q y <u, x> / 2 exactly, so no sampling is needed.
  cd.margin.kind = DataKind::mnist_binary;
  cd.margin.u_star = fit_mean_direction(data.train);
  cd.margin.q = key.q;
  double g = std::numeric_limits<double>::infinity();
  for (const auto& ex : data.train) g = std::min(g, key.q * ex.y * cd.margin.u_star.dot(ex.x) / 2.0);
  cd.gamma = g;
  const std::size_t n_test = std::min(spec.n_mc, data.test.size());
  cd.test.assign(data.test.begin(), data.test.begin() + static_cast<std::ptrdiff_t>(n_test));
  cd.source = std::make_unique<DatasetSource>(data.train, RngStream(key.seed, streams::data));
  return cd;
}

}  // namespace

CellResult run_cell(const ExperimentSpec& spec, const CellKey& key, const LoadedData* data, bool evaluate_risk) {
  LoadedData local;
  if (spec.data != DataSource::halfspace && data == nullptr) {
    local = load_data(spec);
    data = &local;
  }
  CellData cd = prepare_cell_data(spec, key, data ? *data : local);

  CellResult res;
  res.key = key;
  res.gamma = cd.gamma;
  const bool have_margin = cd.gamma > 0.0;
  std::optional<BoundReport> bounds;
  if (have_margin) bounds = compute_bounds(cd.gamma, spec.eta, spec.T, key.m, cd.d, spec.delta);
  if (spec.c) res.c = *spec.c;
  else if (bounds) res.c = bounds->c;
  else res.c = std::sqrt(static_cast<double>(cd.d)) + 2.0 * std::sqrt(std::log(static_cast<double>(key.m))) + 1.0;

  TrainConfig cfg;
  cfg.m = key.m;
  cfg.d = cd.d;
  cfg.q = key.q;
  cfg.eta = spec.eta;
  cfg.c = res.c;
  cfg.T = spec.T;
  cfg.seed = key.seed;
  cfg.variant = spec.variant;
  cfg.snapshot_stride = spec.snapshot_stride;
  cfg.keep_snapshots = false;
  cfg.validate(spec.theory_checks);

  std::size_t attempts = 0;
  const InitResult init = initialize(cfg, &attempts);
  std::optional<Competitor> comp;
  if (have_margin) comp = build_competitor(init.params, cd.margin.psi(), bounds->lambda, cd.gamma);

  std::vector<DropoutMask> random_masks;
  if (evaluate_risk && spec.n_random_masks > 0) {
    RngStream rng(key.seed, streams::random_masks);
    for (std::size_t k = 0; k < spec.n_random_masks; ++k) random_masks.push_back(sample_mask(rng, key.m, key.q));
  }

  struct Risks {
    double full, visited, random;
  };
  std::map<std::size_t, Risks> risks;
  NetworkParams view{Matrix(), init.params.a};
  const std::filesystem::path ckpt_dir = spec.cell_dir();
  auto observer = [&](const IterateView& it) {
    const bool eval_now = it.t == 1 || it.t % spec.eval_stride == 0 || it.t == spec.T;
    const bool ckpt_now = spec.checkpoint_stride > 0 && it.t % spec.checkpoint_stride == 0;
    if (!(evaluate_risk && eval_now) && !ckpt_now) return;
    view.W = it.W;
    if (evaluate_risk && eval_now) {
      // sign f(x; q W) = sign f(x; W) for q > 0, so W_t stands in for the deployed weights.
      std::vector<const DropoutMask*> masks{nullptr, &it.mask};
      for (const auto& rm : random_masks) masks.push_back(&rm);
      const auto r = evaluate_risks(view, masks, cd.test);
      double rand = std::numeric_limits<double>::quiet_NaN();
      if (!random_masks.empty()) {
        rand = 0.0;
        for (std::size_t k = 2; k < r.size(); ++k) rand += r[k].rate;
        rand /= static_cast<double>(random_masks.size());
      }
      risks[it.t] = Risks{r[0].rate, r[1].rate, rand};
    }
    if (ckpt_now) {
      const auto name = "ckpt_m" + std::to_string(key.m) + "_q" + q_label(key.q) + "_s" + std::to_string(key.seed) +
                        "_t" + std::to_string(it.t) + ".bin";
      save_checkpoint(ckpt_dir / name, Checkpoint{view, key.q, it.t});
    }
  };
  if (spec.checkpoint_stride > 0) std::filesystem::create_directories(ckpt_dir);

  const TrainResult run = train_from(cfg, init.params, *cd.source, comp ? &*comp : nullptr, observer);

  res.rows.reserve(run.records.size());
  for (const auto& rec : run.records) {
    CellRow row;
    row.record = rec;
    if (auto it = risks.find(rec.t); it != risks.end()) {
      row.risk_full = it->second.full;
      row.risk_visited = it->second.visited;
      row.risk_random = it->second.random;
    }
    res.rows.push_back(row);
  }

  if (comp) {
    res.lemmas = verify_lemmas(run, cfg, spec.delta);
  } else {
    res.lemma_note = "no positive margin for the constant feature map (estimated gamma = " + format_number(cd.gamma) +
                     "); lemma checks need a competitor";
  }
  return res;
}

void write_cell_csv(std::ostream& out, const CellResult& cell) {
  out << kCellHeader << '\n';
  for (const auto& row : cell.rows) {
    out << metrics_row(row.record) << ',' << format_number(row.risk_full) << ',' << format_number(row.risk_visited)
        << ',' << format_number(row.risk_random) << '\n';
  }
}

namespace {

struct Group {
  std::size_t m;
  double q;
  std::vector<const CellResult*> cells;
};

std::vector<Group> group_cells(const std::vector<CellResult>& cells) {
  std::vector<Group> groups;
  for (const auto& c : cells) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Group& g) { return g.m == c.key.m && g.q == c.key.q; });
    if (it == groups.end()) {
      groups.push_back(Group{c.key.m, c.key.q, {}});
      it = groups.end() - 1;
    }
    it->cells.push_back(&c);
  }
  return groups;
}

}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  using Getter = double (*)(const CellResult&);
  static const std::vector<std::pair<const char*, Getter>> columns = {
      {"inst_loss", [](const CellResult& c) { return c.rows.back().record.inst_loss; }},
      {"sub_output", [](const CellResult& c) { return c.rows.back().record.sub_output; }},
      {"full_output", [](const CellResult& c) { return c.rows.back().record.full_output; }},
      {"max_drift", [](const CellResult& c) { return c.rows.back().record.max_drift; }},
      {"flip_count", [](const CellResult& c) { return static_cast<double>(c.rows.back().record.flip_count); }},
      {"active_neurons", [](const CellResult& c) { return static_cast<double>(c.rows.back().record.active_neurons); }},
      {"risk_full", [](const CellResult& c) { return c.rows.back().risk_full; }},
      {"risk_visited", [](const CellResult& c) { return c.rows.back().risk_visited; }},
      {"risk_random", [](const CellResult& c) { return c.rows.back().risk_random; }},
      {"risk_full_avg",
       [](const CellResult& c) {
         double s = 0.0;
         std::size_t n = 0;
         for (const auto& r : c.rows)
           if (r.evaluated()) {
             s += r.risk_full;
             ++n;
           }
         return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
       }},
  };

  out << "m,q,seeds";
  for (const auto& [name, get] : columns) out << ',' << name << "_mean," << name << "_sd";
  out << '\n';
  for (const auto& g : group_cells(cells)) {
    out << g.m << ',' << format_number(g.q) << ',' << g.cells.size();
    for (const auto& [name, get] : columns) {
      std::vector<double> v;
      for (const auto* c : g.cells)
        if (!c->rows.empty()) v.push_back(get(*c));
      const bool any_nan = v.empty() || std::any_of(v.begin(), v.end(), [](double x) { return std::isnan(x); });
      if (any_nan) {
        out << ",,";
        continue;
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      out << ',' << format_number(mean) << ',' << format_number(sample_sd(v, mean));
    }
    out << '\n';
  }
}

nlohmann::json lemma_report_json(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["delta"] = spec.delta;
  j["cells"] = nlohmann::json::array();
  for (const auto& g : group_cells(cells)) {
    nlohmann::json cj{{"m", g.m}, {"q", g.q}, {"seeds", g.cells.size()}};
    std::vector<LemmaReport> reports;
    std::string note;
    for (const auto* c : g.cells) {
      if (c->lemmas) reports.push_back(*c->lemmas);
      else if (note.empty()) note = c->lemma_note;
    }
    cj["gamma"] = g.cells.front()->gamma;
    cj["c"] = g.cells.front()->c;
    cj["margin"] = spec.data == DataSource::halfspace
                       ? "certified (halfspace construction)"
                       : "heuristic (class-mean direction fit on the training split)";
    if (reports.empty()) {
      cj["status"] = "not verified";
      cj["note"] = note;
    } else {
      const LemmaReport agg = aggregate_reports(reports, spec.delta);
      cj["status"] = agg.preconditions_met ? "verified" : "preconditions unmet";
      cj["report"] = agg;
    }
    j["cells"].push_back(std::move(cj));
  }
  return j;
}

namespace {

bool binding(const LemmaCheck& c, bool preconditions_met) {
  const bool deterministic =
      c.id == "lemma1_regret" || c.id == "lemma1_telescoping" || c.id == "lemmaA8_worst_case";
  return deterministic || preconditions_met;
}

}  // namespace

bool lemma_suite_passed(const std::vector<CellResult>& cells, double delta) {
  for (const auto& g : group_cells(cells)) {
    std::vector<LemmaReport> reports;
    for (const auto* c : g.cells)
      if (c->lemmas) reports.push_back(*c->lemmas);
    if (reports.empty()) continue;
    const LemmaReport agg = aggregate_reports(reports, delta);
    for (const auto& c : agg.checks)
      if (c.status == CheckStatus::failed && binding(c, agg.preconditions_met)) return false;
  }
  return true;
}

std::vector<CellResult> run_experiment(const ExperimentSpec& spec, const RunOptions& opts) {
  spec.validate();
  const auto dir = spec.cell_dir();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

  const LoadedData data = load_data(spec);

  std::vector<CellKey> keys;
  for (auto m : spec.widths)
    for (double q : spec.keep_probs)
      for (std::size_t s = 0; s < spec.n_seeds; ++s) keys.push_back(CellKey{m, q, spec.seed + s});

  std::vector<CellResult> results(keys.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= keys.size()) return;
      {
        std::lock_guard lock(log_mu);
        if (failure) return;
      }
      try {
        const auto t0 = std::chrono::steady_clock::now();
        results[i] = run_cell(spec, keys[i], &data, opts.evaluate_risk);
        if (opts.log) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          std::lock_guard lock(log_mu);
          *opts.log << "cell m=" << keys[i].m << " q=" << q_label(keys[i].q) << " seed=" << keys[i].seed << " done in "
                    << format_number(std::round(secs * 100.0) / 100.0) << " s\n";
        }
      } catch (...) {
        std::lock_guard lock(log_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  std::size_t n_threads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, keys.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
  };
  if (opts.write_cells) {
    for (const auto& r : results) {
      auto f = open(dir / cell_file_name(r.key));
      write_cell_csv(f, r);
    }
    auto f = open(dir / "summary.csv");
    write_summary_csv(f, results);
  }
  auto f = open(dir / "lemma_report.json");
  f << lemma_report_json(spec, results).dump(2) << '\n';
  if (!f) throw std::runtime_error("error writing lemma report in " + dir.string());
  return results;
}

}  // namespace droplab
