#include "fixtures.hpp"

#include <algorithm>
#include <array>

namespace fixture {

using namespace mmpt;

LabelSet labels(std::size_t n, const std::string& prefix, LabelRole role) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return LabelSet(std::move(names), role);
}

CompositionSpace random_space(std::mt19937_64& rng, std::size_t n_attributes,
                              std::size_t n_objects) {
  CompositionSpace space = build_space(labels(n_attributes, "a", LabelRole::attribute),
                                       labels(n_objects, "o", LabelRole::object));
  const auto all = space.enumerate();
  std::vector<Composition> seen, val, test;
  std::uniform_int_distribution<int> pick(0, 2);
  for (const auto& c : all) {
    switch (pick(rng)) {
      case 0: seen.push_back(c); break;
      case 1: val.push_back(c); break;
      default: test.push_back(c); break;
    }
  }
  if (all.size() >= 2) {
    if (seen.empty()) {
      seen.push_back(all[0]);
      std::erase(val, all[0]);
      std::erase(test, all[0]);
    }
    if (val.empty() && test.empty()) {
      const Composition moved = seen.back();
      seen.pop_back();
      test.push_back(moved);
    }
  }
  return assign_splits(std::move(space), std::move(seen), std::move(val), std::move(test));
}

namespace {

std::vector<double> random_row(std::mt19937_64& rng, std::size_t n, bool lattice) {
  std::vector<double> row(n);
  double total = 0.0;
  if (lattice) {
    std::uniform_int_distribution<int> d(1, 3);
    for (double& x : row) total += (x = double(d(rng)));
  } else {
    std::exponential_distribution<double> d(1.0);
    for (double& x : row) total += (x = d(rng) + 1e-3);
  }
  for (double& x : row) x /= total;
  return row;
}

}  // namespace

ScoreTable random_table(std::mt19937_64& rng, std::size_t max_samples, std::size_t max_side) {
  std::uniform_int_distribution<std::size_t> side(1, max_side), count(1, max_samples);
  std::size_t na = side(rng), no = side(rng);
  while (na * no < 2) no = side(rng);
  ScoreTable t;
  t.space = random_space(rng, na, no);
  const bool lattice = std::uniform_int_distribution<int>(0, 2)(rng) == 0;
  const std::size_t n = count(rng);
  t.rho_a = Matrix<double>(n, na);
  t.rho_o = Matrix<double>(n, no);
  const auto all = t.space.enumerate();
  std::vector<Composition> non_seen;
  for (const auto& c : all) {
    if (!t.space.is_seen(c)) non_seen.push_back(c);
  }
  std::uniform_int_distribution<std::size_t> any(0, all.size() - 1),
      unseen(0, non_seen.size() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    t.sample_ids.push_back(i);
    t.labels.push_back(i == 0 ? non_seen[unseen(rng)] : all[any(rng)]);
    const auto ra = random_row(rng, na, lattice), ro = random_row(rng, no, lattice);
    std::copy(ra.begin(), ra.end(), t.rho_a.row(i).begin());
    std::copy(ro.begin(), ro.end(), t.rho_o.row(i).begin());
  }
  return t;
}

ScoreTable hand_table() {
  CompositionSpace space = build_space(labels(3, "a", LabelRole::attribute),
                                       labels(3, "o", LabelRole::object));
  space = assign_splits(std::move(space), {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 0}, {2, 2}},
                        {{2, 1}}, {{0, 2}, {1, 0}});
  struct Row {
    Composition label;
    std::array<double, 3> a, o;
  };
  const Row rows[] = {
      {{0, 0}, {0.7, 0.2, 0.1}, {0.6, 0.3, 0.1}},      // seen hit until b = 0.42 - 0.12
      {{1, 1}, {0.3, 0.6, 0.1}, {0.2, 0.5, 0.3}},      // seen hit until b = 0.30 - 0.12
      {{0, 1}, {0.35, 0.55, 0.1}, {0.1, 0.5, 0.4}},    // best seen is (1,1): never right
      {{0, 2}, {0.8, 0.1, 0.1}, {0.5, 0.1, 0.4}},      // unseen hit from b = 0.40 - 0.32
      {{1, 0}, {0.15, 0.75, 0.1}, {0.7, 0.2, 0.1}},    // unseen hit from b = 0.15 - 0.525
      {{1, 0}, {0.45, 0.45, 0.1}, {0.2, 0.2, 0.6}},    // ties (0,2) vs (1,2): wrong unseen
  };
  ScoreTable t;
  t.space = space;
  t.rho_a = Matrix<double>(6, 3);
  t.rho_o = Matrix<double>(6, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    t.sample_ids.push_back(100 + i);
    t.labels.push_back(rows[i].label);
    for (std::size_t k = 0; k < 3; ++k) {
      t.rho_a(i, k) = rows[i].a[k];
      t.rho_o(i, k) = rows[i].o[k];
    }
  }
  return t;
}

MMPTConfig gradcheck_config() {
  MMPTConfig c = toy_config();
  c.image_size = 8;
  c.patch_size = 4;
  c.prompt_patch_size = 4;
  c.d_v = 16;
  c.d_l = 12;
  c.d_s = 8;
  c.d_joint = 8;
  c.h_v = c.h_a = c.h_o = 2;
  c.h_s = 1;
  c.prompt_len = 2;
  c.heads_v = 4;
  c.heads_l = 4;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mmpt_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
