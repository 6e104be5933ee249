#pragma once

// Independent reference implementations used to check the library. They are
// written for clarity (plain loops, double precision) and share no code with
// the code under test beyond the data types.

#include <cstddef>
#include <vector>

#include "mmpt/composition_space.hpp"
#include "mmpt/matrix.hpp"
#include "mmpt/score_table.hpp"

namespace oracle {

struct SweepResult {
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  double AUC = 0.0;
  std::size_t biases_evaluated = 0;
};

// Open-world prediction at one bias by scanning every composition: a candidate
// replaces the current best when its biased score is larger, or equal while the
// candidate is non-seen and the best is seen.
mmpt::Composition predict_at_bias(const mmpt::ScoreTable& table, std::size_t sample, double bias);

// Brute-force calibration sweep: `grid_points` uniform biases over [-M, M]
// plus, for every sample and every (seen, non-seen) pair, the score gap,
// points up to two ulps of the scores either side of it, and the doubles
// around the rounding flip at gap - ulp(s)/2.
SweepResult dense_sweep(const mmpt::ScoreTable& table, std::size_t grid_points = 10001);

// C = A * B with plain triple loops in double.
std::vector<double> gemm(std::size_t n, std::size_t k, std::size_t m, const std::vector<double>& a,
                         const std::vector<double>& b);

// Multi-head self-attention over row blocks: softmax(q_h k_h^T / sqrt(d_h)) v_h.
mmpt::Matrix<double> attention(const mmpt::Matrix<double>& q, const mmpt::Matrix<double>& k,
                               const mmpt::Matrix<double>& v, std::size_t block,
                               std::size_t heads);

mmpt::Matrix<double> layer_norm(const mmpt::Matrix<double>& x, const std::vector<double>& gamma,
                                const std::vector<double>& beta, double eps = 1e-5);

// Row i, column k: softmax_k(cos(z_i nu, y_k omega) / tau).
mmpt::Matrix<double> cosine_softmax(const mmpt::Matrix<double>& z, const mmpt::Matrix<double>& y,
                                    const mmpt::Matrix<double>& omega,
                                    const mmpt::Matrix<double>& nu, double tau);

// -log rho_a[a] - log rho_o[o] with both probabilities floored at 1e-30.
double composition_loss(const std::vector<double>& rho_a, const std::vector<double>& rho_o,
                        std::size_t a, std::size_t o);

}  // namespace oracle
