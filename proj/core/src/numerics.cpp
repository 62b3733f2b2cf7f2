#include "droplab/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace droplab {

namespace {

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id),
                    static_cast<std::uint32_t>(stream_id >> 32), 0x64726f70u};
  return std::mt19937_64(seq);
}

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

void require_finite(double z, const char* what) {
  if (!std::isfinite(z)) throw DomainError(std::string(what) + ": non-finite argument");
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::substream(std::uint64_t index) const {
  return RngStream(seed_, mix(stream_id_ ^ mix(index + 1)));
}

bool RngStream::bernoulli(double p) {
  if (p >= 1.0) return true;
  if (p <= 0.0) return false;
  return uniform_(engine_) < p;
}

double logistic_loss(double z) {
  require_finite(z, "logistic_loss");
  if (z < 0) return -z + std::log1p(std::exp(z));
  return std::log1p(std::exp(-z));
}

double logistic_neg_deriv(double z) {
  require_finite(z, "logistic_neg_deriv");
  if (z >= 0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

Vector sample_gaussian_vector(RngStream& rng, std::size_t d) {
  if (d == 0) throw DomainError("sample_gaussian_vector: d must be >= 1");
  Vector v(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

Vector sample_unit_sphere(RngStream& rng, std::size_t d) {
  for (;;) {
    Vector v = sample_gaussian_vector(rng, d);
    const double n = v.norm();
    if (n > 0) return v / n;
  }
}

double standard_error(double sum, double sum_sq, std::size_t n) {
  if (n < 2) return 0.0;
  const double dn = static_cast<double>(n);
  const double mean = sum / dn;
  const double var = std::max(0.0, (sum_sq - dn * mean * mean) / (dn - 1.0));
  return std::sqrt(var / dn);
}

}  // namespace droplab
