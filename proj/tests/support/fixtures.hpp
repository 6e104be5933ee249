#pragma once

// Shared test fixtures: small label spaces, random score tables, the 6-sample
// hand table and the small gradient-check model configuration.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mmpt/composition_space.hpp"
#include "mmpt/model_config.hpp"
#include "mmpt/score_table.hpp"

namespace fixture {

mmpt::LabelSet labels(std::size_t n, const std::string& prefix, mmpt::LabelRole role);

// Every composition lands in exactly one split; at least one seen and one
// non-seen composition.
mmpt::CompositionSpace random_space(std::mt19937_64& rng, std::size_t n_attributes,
                                    std::size_t n_objects);

// Random factorized table on a random space of at most max_side x max_side
// with 1..max_samples samples, at least one of them unseen-labelled. About a
// third of the tables draw probabilities from a coarse lattice so that exact
// score ties occur.
mmpt::ScoreTable random_table(std::mt19937_64& rng, std::size_t max_samples = 10,
                              std::size_t max_side = 5);

// 3x3 space, 6 samples (3 seen-labelled, 3 unseen-labelled). Worked by hand:
// per-sample thresholds 0.30 and 0.18 (seen hits), 0.08 and -0.375 (unseen
// hits); one seen sample is always wrong and one unseen sample ties at bias 0
// with a wrong unseen pair. S = U = HM = 200/3, AUC = 400/9.
mmpt::ScoreTable hand_table();

// 2 layers per branch, h_s=1, L_p=2, d_s=8, d_v=16, d_l=12, d_joint=8, 8x8
// images with 4 px patches.
mmpt::MMPTConfig gradcheck_config();

// Fresh empty directory under the system temp path.
std::filesystem::path temp_dir(const std::string& name);

}  // namespace fixture
