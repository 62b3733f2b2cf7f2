#pragma once

#include "droplab/numerics.hpp"

namespace droplab {

/// Reference point of the regret analysis: U = W_1 + lambda V, where
/// v_r = a_r psi(w_{r,1}) / sqrt(m) is the max-margin direction at
/// initialization.
struct Competitor {
  Matrix V;
  Matrix U;
  double lambda = 0.0;
  double gamma = 0.0;
};

}  // namespace droplab
