#include "droplab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

namespace droplab {

namespace {
constexpr double kMaxGamma0 = 0.999;
}

FeatureMap MarginSpec::psi() const {
  return [u = u_star](const Vector&) { return u; };
}

void MarginSpec::validate() const {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("margin spec: q must lie in [0, 1]");
  if (u_star.size() == 0) throw DomainError("margin spec: u_star is empty");
  if (u_star.norm() > 1.0 + 1e-12) throw DomainError("margin spec: ||u_star|| must be <= 1");
  if (kind != DataKind::halfspace) return;
  if (std::abs(u_star.norm() - 1.0) > 1e-12) throw DomainError("halfspace spec: u_star must be a unit vector");
  if (!(gamma0 > 0.0)) throw DomainError("halfspace spec: gamma0 must be > 0");
  if (gamma0 > kMaxGamma0) throw DomainError("halfspace spec: gamma0 must be <= 0.999 (rejection region vanishes)");
}

MarginSpec make_halfspace_spec(std::size_t d, double gamma0, double q) {
  if (d == 0) throw DomainError("halfspace spec: d must be >= 1");
  MarginSpec spec;
  spec.kind = DataKind::halfspace;
  spec.u_star = Vector::Zero(static_cast<Eigen::Index>(d));
  spec.u_star[0] = 1.0;
  spec.gamma0 = gamma0;
  spec.q = q;
  spec.validate();
  return spec;
}

Example sample_halfspace_one(RngStream& rng, const MarginSpec& spec) {
  const auto d = static_cast<std::size_t>(spec.u_star.size());
  for (;;) {
    Vector x = sample_unit_sphere(rng, d);
    const double proj = spec.u_star.dot(x);
    if (std::abs(proj) >= spec.gamma0) return Example{std::move(x), proj >= 0 ? 1 : -1};
  }
}

std::vector<Example> sample_halfspace(RngStream& rng, const MarginSpec& spec, std::size_t n) {
  if (spec.kind != DataKind::halfspace) throw DomainError("sample_halfspace: spec is not a halfspace spec");
  spec.validate();
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_halfspace_one(rng, spec));
  return out;
}

double halfspace_acceptance_probability(std::size_t d, double gamma0) {
  if (d == 0) throw DomainError("halfspace_acceptance_probability: d must be >= 1");
  if (gamma0 <= 0.0) return 1.0;
  if (gamma0 > 1.0) return 0.0;
  if (d == 1) return 1.0;
  // x_1^2 ~ Beta(1/2, (d-1)/2) for x uniform on the sphere.
  return boost::math::ibetac(0.5, 0.5 * static_cast<double>(d - 1), gamma0 * gamma0);
}

double certified_margin(const MarginSpec& spec) {
  if (spec.kind != DataKind::halfspace)
    throw DomainError("certified_margin: only halfspace specs carry a certificate; use estimate_margin");
  return spec.q * spec.gamma0 / 2.0;
}

MarginEstimate estimate_margin(RngStream& rng, const MarginSpec& spec,
                               std::span<const Example> examples, std::size_t n_mc) {
  return estimate_margin(rng, spec.psi(), spec.q, examples, n_mc);
}

MarginEstimate estimate_margin(RngStream& rng, const FeatureMap& psi, double q,
                               std::span<const Example> examples, std::size_t n_mc) {
  if (examples.empty()) throw DomainError("estimate_margin: empty example list");
  if (n_mc == 0) throw DomainError("estimate_margin: n_mc must be >= 1");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("estimate_margin: q must lie in [0, 1]");
  const auto d = static_cast<std::size_t>(examples.front().x.size());

  MarginEstimate best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& ex = examples[i];
    if (std::abs(ex.x.norm() - 1.0) > 1e-9) throw DomainError("estimate_margin: examples must be unit-norm");
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t k = 0; k < n_mc; ++k) {
      const Vector z = sample_gaussian_vector(rng, d);
      const bool keep = rng.bernoulli(q);
      double v = 0.0;
      if (keep && z.dot(ex.x) >= 0.0) v = ex.y * psi(z).dot(ex.x);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / static_cast<double>(n_mc);
    if (mean < best.value) {
      best.value = mean;
      best.standard_error = standard_error(sum, sum_sq, n_mc);
      best.argmin = i;
    }
  }
  return best;
}

Vector fit_mean_direction(std::span<const Example> examples) {
  if (examples.empty()) throw DomainError("fit_mean_direction: empty example list");
  Vector acc = Vector::Zero(examples.front().x.size());
  for (const auto& ex : examples) acc += ex.y * ex.x;
  const double n = acc.norm();
  if (n == 0.0) throw DomainError("fit_mean_direction: classes cancel exactly");
  return acc / n;
}

HalfspaceSource::HalfspaceSource(MarginSpec spec, RngStream rng) : spec_(std::move(spec)), rng_(std::move(rng)) {
  if (spec_.kind != DataKind::halfspace) throw DomainError("HalfspaceSource: spec is not a halfspace spec");
  spec_.validate();
}

std::optional<Example> HalfspaceSource::next() { return sample_halfspace_one(rng_, spec_); }

DatasetSource::DatasetSource(std::vector<Example> examples) : examples_(std::move(examples)) {}

DatasetSource::DatasetSource(std::vector<Example> examples, RngStream shuffle_rng)
    : examples_(std::move(examples)) {
  // Fisher-Yates with our own index draws so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = examples_.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(shuffle_rng.engine()() % i);
    std::swap(examples_[i - 1], examples_[j]);
  }
}

std::optional<Example> DatasetSource::next() {
  if (pos_ >= examples_.size()) return std::nullopt;
  return examples_[pos_++];
}

// ---------------------------------------------------------------------------

void write_examples(std::ostream& out, std::span<const Example> examples) {
  std::ostringstream line;
  line.precision(17);
  for (const auto& ex : examples) {
    line.str("");
    line << ex.y;
    for (Eigen::Index i = 0; i < ex.x.size(); ++i) line << ' ' << ex.x[i];
    line << '\n';
    out << line.str();
  }
}

std::vector<Example> read_examples(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index d = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int y = 0;
    if (!(ls >> y) || (y != 1 && y != -1))
      throw std::runtime_error("examples line " + std::to_string(lineno) + ": label must be +1 or -1");
    std::vector<double> xs;
    double v;
    while (ls >> v) xs.push_back(v);
    if (!ls.eof()) throw std::runtime_error("examples line " + std::to_string(lineno) + ": bad number");
    if (xs.empty()) throw std::runtime_error("examples line " + std::to_string(lineno) + ": no features");
    if (d >= 0 && static_cast<Eigen::Index>(xs.size()) != d)
      throw std::runtime_error("examples line " + std::to_string(lineno) + ": dimension mismatch");
    d = static_cast<Eigen::Index>(xs.size());
    out.push_back(Example{Eigen::Map<const Vector>(xs.data(), d), y});
  }
  return out;
}

void save_examples(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  write_examples(f, examples);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Example> load_examples(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return read_examples(f);
}

}  // namespace droplab
