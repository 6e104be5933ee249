#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace mmpt {

enum class LabelRole { attribute, object };

// Ordered, duplicate-free label vocabulary with dense indices.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::vector<std::string> names, LabelRole role);

  [[nodiscard]] std::size_t size() const noexcept { return names_.size(); }
  [[nodiscard]] bool empty() const noexcept { return names_.empty(); }
  [[nodiscard]] LabelRole role() const noexcept { return role_; }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_.at(i); }
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const;

  friend bool operator==(const LabelSet& a, const LabelSet& b) {
    return a.role_ == b.role_ && a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> lookup_;
  LabelRole role_ = LabelRole::attribute;
};

struct Composition {
  std::size_t attribute = 0;
  std::size_t object = 0;

  friend auto operator<=>(const Composition&, const Composition&) = default;
};

enum class Regime { supervised, zsl, generalized, open_world };

[[nodiscard]] Regime parse_regime(const std::string& name);

// A×O product space with seen / unseen-validation / unseen-test splits.
// Compositions are identified by index pair; enumeration is attribute-major,
// i.e. flat index = attribute * |O| + object.
class CompositionSpace {
 public:
  CompositionSpace() = default;

  [[nodiscard]] const LabelSet& attributes() const noexcept { return attributes_; }
  [[nodiscard]] const LabelSet& objects() const noexcept { return objects_; }
  [[nodiscard]] std::size_t size() const noexcept {
    return attributes_.size() * objects_.size();
  }
  [[nodiscard]] bool splits_assigned() const noexcept { return splits_assigned_; }

  [[nodiscard]] std::size_t flat_index(Composition c) const noexcept {
    return c.attribute * objects_.size() + c.object;
  }
  [[nodiscard]] Composition from_flat(std::size_t i) const noexcept {
    return {i / objects_.size(), i % objects_.size()};
  }
  [[nodiscard]] bool contains(Composition c) const noexcept {
    return c.attribute < attributes_.size() && c.object < objects_.size();
  }

  // Full product set in attribute-major order.
  [[nodiscard]] std::vector<Composition> enumerate() const;

  [[nodiscard]] const std::vector<Composition>& seen() const noexcept { return seen_; }
  [[nodiscard]] const std::vector<Composition>& unseen_val() const noexcept { return unseen_val_; }
  [[nodiscard]] const std::vector<Composition>& unseen_test() const noexcept {
    return unseen_test_;
  }

  [[nodiscard]] bool is_seen(Composition c) const;
  [[nodiscard]] bool is_unseen_val(Composition c) const;
  [[nodiscard]] bool is_unseen_test(Composition c) const;
  // Dense mask over the flat grid: 1 for seen compositions.
  [[nodiscard]] const std::vector<char>& seen_mask() const noexcept { return seen_mask_; }

  [[nodiscard]] std::string describe(Composition c) const;
  [[nodiscard]] std::optional<Composition> lookup(const std::string& attribute,
                                                  const std::string& object) const;

  [[nodiscard]] bool same_labels(const CompositionSpace& other) const {
    return attributes_ == other.attributes_ && objects_ == other.objects_;
  }

  friend CompositionSpace build_space(LabelSet attrs, LabelSet objs);
  friend CompositionSpace assign_splits(CompositionSpace space, std::vector<Composition> seen,
                                        std::vector<Composition> unseen_val,
                                        std::vector<Composition> unseen_test);

 private:
  LabelSet attributes_;
  LabelSet objects_;
  std::vector<Composition> seen_;
  std::vector<Composition> unseen_val_;
  std::vector<Composition> unseen_test_;
  std::vector<char> seen_mask_;
  std::vector<char> split_tag_;  // 0 none, 1 seen, 2 unseen_val, 3 unseen_test
  bool splits_assigned_ = false;
};

[[nodiscard]] CompositionSpace build_space(LabelSet attrs, LabelSet objs);

// Splits are stored sorted in attribute-major order with duplicates removed.
[[nodiscard]] CompositionSpace assign_splits(CompositionSpace space,
                                             std::vector<Composition> seen,
                                             std::vector<Composition> unseen_val,
                                             std::vector<Composition> unseen_test);

[[nodiscard]] std::vector<Composition> output_space(const CompositionSpace& space, Regime regime);

// Space definition file: {attributes[], objects[], seen[], unseen_val[],
// unseen_test[]}, each pair written as [attr_name, obj_name].
[[nodiscard]] nlohmann::json space_to_json(const CompositionSpace& space);
[[nodiscard]] CompositionSpace space_from_json(const nlohmann::json& j);
void save_space(const CompositionSpace& space, const std::string& path);
[[nodiscard]] CompositionSpace load_space(const std::string& path);

// 8 attributes x 10 objects with 56 seen / 12 unseen-val / 12 unseen-test.
[[nodiscard]] CompositionSpace default_synthetic_space();

}  // namespace mmpt
