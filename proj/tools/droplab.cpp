// Command-line front end: run / verify / bounds / mnist-prepare.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "droplab/experiment.hpp"

namespace fs = std::filesystem;
using namespace droplab;

namespace {

int cmd_run(const std::string& config_path, bool quiet) {
  const ExperimentSpec spec = load_config(config_path);
  RunOptions opts;
  opts.log = quiet ? nullptr : &std::cerr;
  const auto cells = run_experiment(spec, opts);
  std::cout << "wrote " << cells.size() << " cell files, summary.csv and lemma_report.json to "
            << spec.cell_dir().string() << '\n';
  return 0;
}

void print_check_table(const nlohmann::json& report) {
  for (const auto& cell : report["cells"]) {
    std::cout << "m=" << cell["m"] << " q=" << cell["q"] << " seeds=" << cell["seeds"] << "  ["
              << cell["status"].get<std::string>() << "]\n";
    if (!cell.contains("report")) {
      std::cout << "  " << cell.value("note", "") << '\n';
      continue;
    }
    const auto& rep = cell["report"];
    if (rep.contains("precondition_note")) std::cout << "  " << rep["precondition_note"].get<std::string>() << '\n';
    for (const auto& c : rep["checks"]) {
      std::cout << "  " << c["lemma"].get<std::string>() << ": " << c["status"].get<std::string>();
      if (c["status"] != "skipped")
        std::cout << " (" << c["seeds_passed"] << '/' << c["seeds_total"] << " seeds, min slack " << c["slack"] << ')';
      if (c.contains("note")) std::cout << "  note: " << c["note"].get<std::string>();
      std::cout << '\n';
    }
  }
}

int cmd_verify(const std::string& config_path, bool quiet) {
  const ExperimentSpec spec = load_config(config_path);
  RunOptions opts;
  opts.write_cells = false;
  opts.evaluate_risk = false;
  opts.log = quiet ? nullptr : &std::cerr;
  const auto cells = run_experiment(spec, opts);
  print_check_table(lemma_report_json(spec, cells));
  const bool ok = lemma_suite_passed(cells, spec.delta);
  std::cout << (ok ? "lemma suite: PASS" : "lemma suite: FAIL") << '\n';
  return ok ? 0 : 1;
}

int cmd_bounds(double gamma, double eta, std::size_t T, std::size_t m, std::size_t d, double delta, bool json) {
  const BoundReport r = compute_bounds(gamma, eta, T, m, d, delta);
  if (json) std::cout << nlohmann::json(r).dump(2) << '\n';
  else std::cout << format_bounds(r);
  return 0;
}

int cmd_mnist_prepare(const fs::path& dir, int pos, int neg, const fs::path& out_dir) {
  const fs::path target = out_dir.empty() ? dir : out_dir;
  for (const char* split : {"train", "t10k"}) {
    if (!fs::exists(dir / (std::string(split) + "-images-idx3-ubyte"))) {
      if (std::string(split) == "train") throw std::runtime_error("no train-images-idx3-ubyte in " + dir.string());
      continue;
    }
    const MnistBinary data = load_mnist_binary(dir, pos, neg, split);
    std::size_t n_pos = 0;
    for (const auto& ex : data.examples) n_pos += ex.y > 0;
    const fs::path file =
        target / ("mnist_" + std::to_string(pos) + "v" + std::to_string(neg) + "_" + split + ".txt");
    save_examples(file, data.examples);
    std::cout << split << ": " << data.examples.size() << " examples (" << n_pos << " of digit " << pos << ", "
              << data.examples.size() - n_pos << " of digit " << neg << "), " << data.skipped_zero
              << " all-zero images skipped -> " << file.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"droplab: dropout training of wide two-layer ReLU networks, with bound checks"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress per-cell progress lines");

  std::string run_config;
  auto* run = app.add_subcommand("run", "run an experiment sweep from a config file");
  run->add_option("config", run_config, "config file")->required()->check(CLI::ExistingFile);

  std::string verify_config;
  auto* verify = app.add_subcommand("verify", "train every cell and run only the lemma suite");
  verify->add_option("config", verify_config, "config file")->required()->check(CLI::ExistingFile);

  double gamma = 0, eta = 0, delta = 0.05;
  std::size_t T = 0, m = 0, d = 0;
  bool json = false;
  auto* bounds = app.add_subcommand("bounds", "print c, lambda, the required width and the theorem bounds");
  bounds->add_option("--gamma", gamma, "margin")->required();
  bounds->add_option("--eta", eta, "learning rate")->required();
  bounds->add_option("--T", T, "number of iterations")->required();
  bounds->add_option("--m", m, "width")->required();
  bounds->add_option("--d", d, "input dimension")->required();
  bounds->add_option("--delta", delta, "failure probability")->capture_default_str();
  bounds->add_flag("--json", json, "print JSON instead of a table");

  std::string mnist_dir, mnist_out;
  int pos = -1, neg = -1;
  auto* prep = app.add_subcommand("mnist-prepare", "extract a two-digit MNIST problem into a text example file");
  prep->add_option("dir", mnist_dir, "directory with the IDX files")->required()->check(CLI::ExistingDirectory);
  prep->add_option("--pos", pos, "digit labelled +1")->required()->check(CLI::Range(0, 9));
  prep->add_option("--neg", neg, "digit labelled -1")->required()->check(CLI::Range(0, 9));
  prep->add_option("-o,--out", mnist_out, "output directory (default: the input directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_config, quiet);
    if (*verify) return cmd_verify(verify_config, quiet);
    if (*bounds) return cmd_bounds(gamma, eta, T, m, d, delta, json);
    if (*prep) return cmd_mnist_prepare(mnist_dir, pos, neg, mnist_out);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
