#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "droplab/numerics.hpp"

namespace droplab {

/// Two-layer ReLU network x -> (1/sqrt(m)) a^T relu(W x) with fixed output
/// signs. Only W is trained.
struct NetworkParams {
  Matrix W;  ///< m x d, row r = w_r
  Vector a;  ///< m entries, each exactly +1 or -1

  std::size_t width() const { return static_cast<std::size_t>(W.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(W.cols()); }
};

/// Diagonal Bernoulli(q) pattern over hidden units.
struct DropoutMask {
  std::vector<std::uint8_t> bits;
  double q = 1.0;

  std::size_t size() const { return bits.size(); }
  std::size_t active() const;
  static DropoutMask all_ones(std::size_t m);
};

struct InitResult {
  NetworkParams params;
  double max_row_norm = 0.0;
};

/// w_r ~ N(0, I_d), a_r ~ Unif{+1, -1}.
InitResult init_network(RngStream& rng, std::size_t m, std::size_t d);

DropoutMask sample_mask(RngStream& rng, std::size_t m, double q);

/// Full network output f(x; W).
double forward_full(const NetworkParams& params, const Vector& x);

/// Sub-network output g(W; x, B) = (1/sqrt(m)) a^T B relu(W x).
double forward_sub(const NetworkParams& params, const DropoutMask& mask, const Vector& x);

/// Gradient of forward_sub with respect to W. The ReLU is taken as active at 0.
Matrix grad_sub(const NetworkParams& params, const DropoutMask& mask, const Vector& x);

/// Same as above on precomputed pre-activations W x.
double forward_from_preact(const Vector& a, const DropoutMask* mask, const Vector& preact);

double max_row_norm(const Matrix& W);

/// Frobenius inner product <A, B>.
inline double frobenius_dot(const Matrix& A, const Matrix& B) { return A.cwiseProduct(B).sum(); }

// ---------------------------------------------------------------------------
// Checkpoints: little-endian header (u64 m, u64 d, f64 q, u64 t), then a as
// signed bytes, then W row-major as f64.

struct Checkpoint {
  NetworkParams params;
  double q = 1.0;
  std::uint64_t iteration = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace droplab
