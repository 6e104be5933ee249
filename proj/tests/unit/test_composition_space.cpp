#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "mmpt/composition_space.hpp"
#include "mmpt/errors.hpp"

using namespace mmpt;
using fixture::labels;

TEST_SUITE("composition_space") {

namespace {

CompositionSpace product(std::size_t na, std::size_t no) {
  return build_space(labels(na, "a", LabelRole::attribute), labels(no, "o", LabelRole::object));
}

std::set<Composition> as_set(const std::vector<Composition>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("product sizes") {
  CHECK(product(115, 245).size() == 28175);
  CHECK(product(16, 12).size() == 192);
  CHECK(product(1, 1).size() == 1);
}

TEST_CASE("label sets reject duplicates and empties") {
  try {
    LabelSet bad({"red", "blue", "red"}, LabelRole::attribute);
    FAIL("duplicate accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("red") != std::string::npos);
  }
  CHECK_THROWS_AS(build_space(LabelSet({}, LabelRole::attribute), labels(2, "o", LabelRole::object)),
                  ValidationError);
  LabelSet ok({"x", "y"}, LabelRole::object);
  CHECK(ok.index_of("y") == std::size_t{1});
  CHECK_FALSE(ok.index_of("z").has_value());
}

TEST_CASE("enumeration is attribute-major and visits each pair once") {
  const CompositionSpace s = product(3, 4);
  const auto all = s.enumerate();
  REQUIRE(all.size() == 12);
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].attribute == i / 4);
    CHECK(all[i].object == i % 4);
    CHECK(s.flat_index(all[i]) == i);
    CHECK(s.from_flat(i) == all[i]);
  }
}

TEST_CASE("split assignment") {
  CompositionSpace s = product(1, 2);
  CHECK_NOTHROW(assign_splits(s, {{0, 0}}, {}, {{0, 1}}));
  try {
    (void)assign_splits(s, {{0, 0}}, {}, {{0, 0}});
    FAIL("overlap accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("overlap") != std::string::npos);
    CHECK(std::string(e.what()).find("a0") != std::string::npos);
  }
  CHECK_THROWS_AS(assign_splits(s, {{0, 2}}, {}, {}), ValidationError);
  CHECK_THROWS_AS(assign_splits(s, {{1, 0}}, {}, {}), ValidationError);
}

TEST_CASE("MIT-sized splits fit inside the product") {
  CompositionSpace s = product(115, 245);
  std::vector<Composition> seen, test;
  const auto all = s.enumerate();
  for (std::size_t i = 0; i < 1262; ++i) seen.push_back(all[i * 13]);
  for (std::size_t i = 0; i < 400; ++i) test.push_back(all[i * 13 + 7]);
  s = assign_splits(std::move(s), seen, {}, test);
  CHECK(s.seen().size() == 1262);
  CHECK(s.unseen_test().size() == 400);
  CHECK(output_space(s, Regime::open_world).size() == 28175);
}

TEST_CASE("output-space regimes obey the set algebra") {
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(output_space(product(2, 2), Regime::supervised), ValidationError);
  for (int trial = 0; trial < 50; ++trial) {
    const CompositionSpace s = fixture::random_space(rng, 1 + trial % 5, 2 + trial % 4);
    const auto sup = as_set(output_space(s, Regime::supervised));
    const auto zsl = as_set(output_space(s, Regime::zsl));
    const auto gen = as_set(output_space(s, Regime::generalized));
    const auto ow = as_set(output_space(s, Regime::open_world));
    CHECK(ow.size() == s.size());
    CHECK(sup.size() == s.seen().size());
    std::set<Composition> both;
    std::set_intersection(sup.begin(), sup.end(), zsl.begin(), zsl.end(),
                          std::inserter(both, both.end()));
    CHECK(both.empty());
    std::set<Composition> uni = sup;
    uni.insert(zsl.begin(), zsl.end());
    CHECK(uni == gen);
    CHECK(std::includes(ow.begin(), ow.end(), gen.begin(), gen.end()));
  }
  std::vector<Composition> five = {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 2}};
  CHECK(output_space(assign_splits(product(3, 3), five, {}, {}), Regime::supervised).size() == 5);
  CHECK(parse_regime("open_world") == Regime::open_world);
  CHECK_THROWS_AS(parse_regime("closed"), ValidationError);
}

TEST_CASE("default synthetic space") {
  const CompositionSpace s = default_synthetic_space();
  CHECK(s.attributes().size() == 8);
  CHECK(s.objects().size() == 10);
  CHECK(s.seen().size() == 56);
  CHECK(s.unseen_val().size() == 12);
  CHECK(s.unseen_test().size() == 12);
  std::vector<int> per_attr(8), per_obj(10);
  for (const auto& c : s.seen()) {
    ++per_attr[c.attribute];
    ++per_obj[c.object];
  }
  CHECK(*std::min_element(per_attr.begin(), per_attr.end()) >= 5);
  CHECK(*std::min_element(per_obj.begin(), per_obj.end()) >= 5);
}

TEST_CASE("space files round-trip and reject malformed input") {
  const CompositionSpace s = default_synthetic_space();
  const auto dir = fixture::temp_dir("space");
  const std::string path = (dir / "space.json").string();
  save_space(s, path);
  const CompositionSpace back = load_space(path);
  CHECK(back.same_labels(s));
  CHECK(back.seen() == s.seen());
  CHECK(back.unseen_val() == s.unseen_val());
  CHECK(back.unseen_test() == s.unseen_test());

  auto j = space_to_json(s);
  j["extra"] = 1;
  CHECK_THROWS_AS(space_from_json(j), ValidationError);
  j = space_to_json(s);
  j["seen"].push_back({"red", "teapot"});
  CHECK_THROWS_AS(space_from_json(j), ValidationError);
  j = space_to_json(s);
  j.erase("objects");
  CHECK_THROWS_AS(space_from_json(j), ValidationError);
  CHECK(s.lookup("red", "disc").has_value());
  CHECK_FALSE(s.lookup("red", "teapot").has_value());
}

}
