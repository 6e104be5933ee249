#pragma once

// Per-sample attribute and object probabilities, the exchange format between
// a model (ours or external) and the metric engine.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmpt/composition_space.hpp"
#include "mmpt/matrix.hpp"

namespace mmpt {

struct ScoreTable {
  CompositionSpace space;
  std::vector<std::uint64_t> sample_ids;
  std::vector<Composition> labels;
  Matrix<double> rho_a;  // n x |A|
  Matrix<double> rho_o;  // n x |O|
  // Optional n x (|A|*|O|) grid for producers whose composition scores do not
  // factorize. When present it takes precedence over rho_a * rho_o.
  std::optional<Matrix<double>> dense;

  [[nodiscard]] std::size_t size() const noexcept { return sample_ids.size(); }

  // Score of flat composition index `c` for sample `i`.
  [[nodiscard]] double score(std::size_t i, std::size_t c) const {
    if (dense) return (*dense)(i, c);
    const std::size_t n_o = space.objects().size();
    return rho_a(i, c / n_o) * rho_o(i, c % n_o);
  }

  // Row sums within 1e-6, strictly positive entries, labels in range,
  // consistent sizes.
  void validate() const;
};

[[nodiscard]] nlohmann::json score_table_to_json(const ScoreTable& table);
[[nodiscard]] ScoreTable score_table_from_json(const nlohmann::json& j);

// CSV with header sample_id,attribute,object,a:<name>...,o:<name>... and
// label names per row. The label space comes from a separate space file.
[[nodiscard]] std::string score_table_to_csv(const ScoreTable& table);
[[nodiscard]] ScoreTable score_table_from_csv(const std::string& text,
                                              const CompositionSpace& space);

// Dispatches on extension: .json is self-contained, anything else is CSV and
// needs `space`.
[[nodiscard]] ScoreTable load_score_table(const std::string& path,
                                          const std::optional<CompositionSpace>& space);
void save_score_table(const ScoreTable& table, const std::string& path);

}  // namespace mmpt
