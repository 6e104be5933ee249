#include "mmpt/composition_space.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

const char* role_name(LabelRole r) { return r == LabelRole::attribute ? "attribute" : "object"; }

void sort_unique(std::vector<Composition>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> names, LabelRole role)
    : names_(std::move(names)), role_(role) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!lookup_.emplace(names_[i], i).second) {
      throw ValidationError(std::string("duplicate ") + role_name(role_) + " label: '" +
                            names_[i] + "'");
    }
  }
}

std::optional<std::size_t> LabelSet::index_of(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

Regime parse_regime(const std::string& name) {
  if (name == "supervised") return Regime::supervised;
  if (name == "zsl") return Regime::zsl;
  if (name == "generalized") return Regime::generalized;
  if (name == "open_world") return Regime::open_world;
  throw ValidationError("unknown output-space regime: " + name);
}

std::vector<Composition> CompositionSpace::enumerate() const {
  std::vector<Composition> out;
  out.reserve(size());
  for (std::size_t a = 0; a < attributes_.size(); ++a)
    for (std::size_t o = 0; o < objects_.size(); ++o) out.push_back({a, o});
  return out;
}

bool CompositionSpace::is_seen(Composition c) const {
  return contains(c) && splits_assigned_ && split_tag_[flat_index(c)] == 1;
}
bool CompositionSpace::is_unseen_val(Composition c) const {
  return contains(c) && splits_assigned_ && split_tag_[flat_index(c)] == 2;
}
bool CompositionSpace::is_unseen_test(Composition c) const {
  return contains(c) && splits_assigned_ && split_tag_[flat_index(c)] == 3;
}

std::string CompositionSpace::describe(Composition c) const {
  if (!contains(c)) {
    return "(" + std::to_string(c.attribute) + "," + std::to_string(c.object) + ")";
  }
  return attributes_.name(c.attribute) + " " + objects_.name(c.object);
}

std::optional<Composition> CompositionSpace::lookup(const std::string& attribute,
                                                    const std::string& object) const {
  auto a = attributes_.index_of(attribute);
  auto o = objects_.index_of(object);
  if (!a || !o) return std::nullopt;
  return Composition{*a, *o};
}

CompositionSpace build_space(LabelSet attrs, LabelSet objs) {
  if (attrs.empty()) throw ValidationError("attribute label set is empty");
  if (objs.empty()) throw ValidationError("object label set is empty");
  if (attrs.role() != LabelRole::attribute || objs.role() != LabelRole::object) {
    throw ValidationError("label set roles must be (attribute, object)");
  }
  CompositionSpace s;
  s.attributes_ = std::move(attrs);
  s.objects_ = std::move(objs);
  s.seen_mask_.assign(s.size(), 0);
  s.split_tag_.assign(s.size(), 0);
  return s;
}

CompositionSpace assign_splits(CompositionSpace space, std::vector<Composition> seen,
                               std::vector<Composition> unseen_val,
                               std::vector<Composition> unseen_test) {
  sort_unique(seen);
  sort_unique(unseen_val);
  sort_unique(unseen_test);

  std::vector<char> tag(space.size(), 0);
  std::vector<std::string> overlaps;
  auto mark = [&](const std::vector<Composition>& split, char t, const char* split_name) {
    for (const auto& c : split) {
      if (!space.contains(c)) {
        throw ValidationError(std::string("composition ") + space.describe(c) + " in split " +
                              split_name + " is outside the label vocabulary");
      }
      char& slot = tag[space.flat_index(c)];
      if (slot != 0) {
        overlaps.push_back(space.describe(c));
      } else {
        slot = t;
      }
    }
  };
  mark(seen, 1, "seen");
  mark(unseen_val, 2, "unseen_val");
  mark(unseen_test, 3, "unseen_test");
  if (!overlaps.empty()) {
    std::ostringstream msg;
    msg << "splits overlap on " << overlaps.size() << " composition(s):";
    for (const auto& o : overlaps) msg << " [" << o << "]";
    throw ValidationError(msg.str());
  }

  space.seen_ = std::move(seen);
  space.unseen_val_ = std::move(unseen_val);
  space.unseen_test_ = std::move(unseen_test);
  space.split_tag_ = std::move(tag);
  space.seen_mask_.assign(space.size(), 0);
  for (const auto& c : space.seen_) space.seen_mask_[space.flat_index(c)] = 1;
  space.splits_assigned_ = true;
  return space;
}

std::vector<Composition> output_space(const CompositionSpace& space, Regime regime) {
  if (!space.splits_assigned()) {
    throw ValidationError("output space requested before splits were assigned");
  }
  std::vector<Composition> out;
  switch (regime) {
    case Regime::supervised:
      out = space.seen();
      break;
    case Regime::zsl:
      out = space.unseen_val();
      out.insert(out.end(), space.unseen_test().begin(), space.unseen_test().end());
      break;
    case Regime::generalized:
      out = space.seen();
      out.insert(out.end(), space.unseen_val().begin(), space.unseen_val().end());
      out.insert(out.end(), space.unseen_test().begin(), space.unseen_test().end());
      break;
    case Regime::open_world:
      return space.enumerate();
  }
  sort_unique(out);
  return out;
}

nlohmann::json space_to_json(const CompositionSpace& space) {
  auto pairs = [&](const std::vector<Composition>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : v) {
      arr.push_back({space.attributes().name(c.attribute), space.objects().name(c.object)});
    }
    return arr;
  };
  return {{"attributes", space.attributes().names()},
          {"objects", space.objects().names()},
          {"seen", pairs(space.seen())},
          {"unseen_val", pairs(space.unseen_val())},
          {"unseen_test", pairs(space.unseen_test())}};
}

CompositionSpace space_from_json(const nlohmann::json& j) {
  static const char* keys[] = {"attributes", "objects", "seen", "unseen_val", "unseen_test"};
  if (!j.is_object()) throw ValidationError("space definition must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::find_if(std::begin(keys), std::end(keys), [&](const char* s) { return k == s; }) ==
        std::end(keys)) {
      throw ValidationError("space definition: unknown key '" + k + "'");
    }
  }
  for (const char* k : keys) {
    if (!j.contains(k) || !j.at(k).is_array()) {
      throw ValidationError(std::string("space definition: missing array '") + k + "'");
    }
  }
  auto names = [&](const char* key) {
    std::vector<std::string> out;
    for (const auto& v : j.at(key)) {
      if (!v.is_string()) throw ValidationError(std::string("space definition: ") + key +
                                                " entries must be strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  };
  CompositionSpace space = build_space(LabelSet(names("attributes"), LabelRole::attribute),
                                       LabelSet(names("objects"), LabelRole::object));
  auto pairs = [&](const char* key) {
    std::vector<Composition> out;
    for (const auto& p : j.at(key)) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string()) {
        throw ValidationError(std::string("space definition: ") + key +
                              " entries must be [attribute, object] string pairs");
      }
      auto c = space.lookup(p[0].get<std::string>(), p[1].get<std::string>());
      if (!c) {
        throw ValidationError(std::string("space definition: ") + key + " pair [" +
                              p[0].get<std::string>() + ", " + p[1].get<std::string>() +
                              "] is outside the label vocabulary");
      }
      out.push_back(*c);
    }
    return out;
  };
  return assign_splits(std::move(space), pairs("seen"), pairs("unseen_val"),
                       pairs("unseen_test"));
}

void save_space(const CompositionSpace& space, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write space file: " + path);
  out << space_to_json(space).dump(2) << "\n";
}

CompositionSpace load_space(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read space file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("space file " + path + " is not valid JSON: " + e.what());
  }
  return space_from_json(j);
}

CompositionSpace default_synthetic_space() {
  LabelSet attrs({"red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple"},
                 LabelRole::attribute);
  LabelSet objs({"disc", "square", "triangle", "hbars", "vbars", "ring", "cross", "diamond",
                 "halfdisc", "frame"},
                LabelRole::object);
  CompositionSpace space = build_space(std::move(attrs), std::move(objs));

  // Three held-out objects per attribute on a cyclic diagonal, so every
  // attribute and every object still appears in at least five seen pairs.
  std::vector<Composition> seen, val, test;
  std::size_t held_out = 0;
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t o = 0; o < 10; ++o) {
      const std::size_t r = (o + 10 - a) % 10;
      if (r == 2 || r == 5 || r == 8) {
        (held_out++ % 2 == 0 ? val : test).push_back({a, o});
      } else {
        seen.push_back({a, o});
      }
    }
  }
  return assign_splits(std::move(space), std::move(seen), std::move(val), std::move(test));
}

}  // namespace mmpt
