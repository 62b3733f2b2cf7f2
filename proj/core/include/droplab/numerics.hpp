#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace droplab {

/// Row-major dense matrix; row r of a weight matrix is the incoming weight
/// vector of hidden unit r.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Raised when an argument lies outside an operation's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Stream ids for the independent consumers of randomness in one run.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t masks = 2;
inline constexpr std::uint64_t data = 3;
inline constexpr std::uint64_t monte_carlo = 4;
inline constexpr std::uint64_t test_data = 5;
inline constexpr std::uint64_t random_masks = 6;
}  // namespace streams

/// A deterministic random stream keyed by (seed, stream id).
///
/// The engine state is derived from both words through std::seed_seq, so two
/// streams with different ids share nothing. A stream is single-owner; copy it
/// to fork an identical sequence, or call substream() for an independent one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Independent child stream, e.g. one per Monte Carlo shard.
  RngStream substream(std::uint64_t index) const;

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool bernoulli(double p);
  /// Uniform draw from {+1, -1}.
  double sign() { return bernoulli(0.5) ? 1.0 : -1.0; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// ln(1 + e^{-z}), stable for large |z|.
double logistic_loss(double z);

/// -l'(z) = 1 / (1 + e^{z}), in (0, 1).
double logistic_neg_deriv(double z);

/// d i.i.d. standard normal entries.
Vector sample_gaussian_vector(RngStream& rng, std::size_t d);

/// Uniform point on the unit sphere in R^d.
Vector sample_unit_sphere(RngStream& rng, std::size_t d);

/// Standard error of a sample mean from running sums.
double standard_error(double sum, double sum_sq, std::size_t n);

}  // namespace droplab
