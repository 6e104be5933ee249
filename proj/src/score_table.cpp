#include "mmpt/score_table.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mmpt/errors.hpp"

namespace mmpt {

namespace {

void check_rows(const Matrix<double>& m, std::size_t n, std::size_t width, const char* name) {
  if (m.rows() != n || m.cols() != width) {
    throw ValidationError(std::string("score table: ") + name + " is " + m.shape_string() +
                          ", expected " + std::to_string(n) + "x" + std::to_string(width));
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (double v : m.row(i)) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw ValidationError(std::string("score table: ") + name + " row " + std::to_string(i) +
                              " has a non-positive or non-finite entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError(std::string("score table: ") + name + " row " + std::to_string(i) +
                            " sums to " + std::to_string(sum));
    }
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("score table line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

Composition lookup_label(const CompositionSpace& space, const std::string& a,
                         const std::string& o, const std::string& where) {
  auto c = space.lookup(a, o);
  if (!c) throw ValidationError(where + ": unknown label (" + a + ", " + o + ")");
  return *c;
}

}  // namespace

void ScoreTable::validate() const {
  const std::size_t n = sample_ids.size();
  if (labels.size() != n) {
    throw ValidationError("score table: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(n) + " samples");
  }
  for (const auto& c : labels) {
    if (!space.contains(c)) throw ValidationError("score table: label outside the label space");
  }
  if (dense) {
    if (dense->rows() != n || dense->cols() != space.size()) {
      throw ValidationError("score table: dense grid is " + dense->shape_string() +
                            ", expected " + std::to_string(n) + "x" +
                            std::to_string(space.size()));
    }
    if (!dense->all_finite()) throw ValidationError("score table: dense grid is not finite");
    return;
  }
  check_rows(rho_a, n, space.attributes().size(), "rho_a");
  check_rows(rho_o, n, space.objects().size(), "rho_o");
}

nlohmann::json score_table_to_json(const ScoreTable& t) {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < t.size(); ++i) {
    nlohmann::json s = {{"sample_id", t.sample_ids[i]},
                        {"attribute", t.space.attributes().name(t.labels[i].attribute)},
                        {"object", t.space.objects().name(t.labels[i].object)}};
    if (t.dense) {
      auto r = t.dense->row(i);
      s["dense"] = std::vector<double>(r.begin(), r.end());
    } else {
      auto a = t.rho_a.row(i);
      auto o = t.rho_o.row(i);
      s["rho_a"] = std::vector<double>(a.begin(), a.end());
      s["rho_o"] = std::vector<double>(o.begin(), o.end());
    }
    samples.push_back(std::move(s));
  }
  return {{"space", space_to_json(t.space)}, {"samples", std::move(samples)}};
}

ScoreTable score_table_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("space") || !j.contains("samples")) {
    throw ValidationError("score table: expected an object with 'space' and 'samples'");
  }
  ScoreTable t;
  t.space = space_from_json(j.at("space"));
  const auto& samples = j.at("samples");
  if (!samples.is_array()) throw ValidationError("score table: 'samples' must be an array");
  const std::size_t n = samples.size();
  const std::size_t na = t.space.attributes().size(), no = t.space.objects().size();
  const bool dense = n > 0 && samples.front().contains("dense");
  if (dense) {
    t.dense = Matrix<double>(n, na * no);
  } else {
    t.rho_a = Matrix<double>(n, na);
    t.rho_o = Matrix<double>(n, no);
  }
  auto copy_row = [](const nlohmann::json& arr, std::span<double> dst, const std::string& what) {
    if (!arr.is_array() || arr.size() != dst.size()) {
      throw ValidationError("score table: " + what + " must have " + std::to_string(dst.size()) +
                            " entries");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = arr[k].get<double>();
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    const std::string where = "score table sample " + std::to_string(i);
    for (const char* key : {"sample_id", "attribute", "object"}) {
      if (!s.contains(key)) throw ValidationError(where + ": missing '" + key + "'");
    }
    t.sample_ids.push_back(s.at("sample_id").get<std::uint64_t>());
    t.labels.push_back(lookup_label(t.space, s.at("attribute").get<std::string>(),
                                    s.at("object").get<std::string>(), where));
    if (dense) {
      if (!s.contains("dense")) throw ValidationError(where + ": missing 'dense'");
      copy_row(s.at("dense"), t.dense->row(i), where + " dense");
    } else {
      if (!s.contains("rho_a") || !s.contains("rho_o")) {
        throw ValidationError(where + ": missing 'rho_a' or 'rho_o'");
      }
      copy_row(s.at("rho_a"), t.rho_a.row(i), where + " rho_a");
      copy_row(s.at("rho_o"), t.rho_o.row(i), where + " rho_o");
    }
  }
  t.validate();
  return t;
}

std::string score_table_to_csv(const ScoreTable& t) {
  if (t.dense) throw ValidationError("score table: dense grids are only written as JSON");
  std::string out = "sample_id,attribute,object";
  for (const auto& a : t.space.attributes().names()) out += ",a:" + a;
  for (const auto& o : t.space.objects().names()) out += ",o:" + o;
  out += '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out += std::to_string(t.sample_ids[i]) + ',' +
           t.space.attributes().name(t.labels[i].attribute) + ',' +
           t.space.objects().name(t.labels[i].object);
    for (double v : t.rho_a.row(i)) out += ',' + fmt(v);
    for (double v : t.rho_o.row(i)) out += ',' + fmt(v);
    out += '\n';
  }
  return out;
}

ScoreTable score_table_from_csv(const std::string& text, const CompositionSpace& space) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("score table: empty CSV");
  const auto header = split_csv(line);
  const std::size_t na = space.attributes().size(), no = space.objects().size();
  if (header.size() != 3 + na + no || header[0] != "sample_id") {
    throw ValidationError("score table: CSV header does not match the label space (" +
                          std::to_string(header.size()) + " columns, expected " +
                          std::to_string(3 + na + no) + ")");
  }
  for (std::size_t a = 0; a < na; ++a) {
    if (header[3 + a] != "a:" + space.attributes().name(a)) {
      throw ValidationError("score table: column '" + header[3 + a] + "' does not match attribute '" +
                            space.attributes().name(a) + "'");
    }
  }
  for (std::size_t o = 0; o < no; ++o) {
    if (header[3 + na + o] != "o:" + space.objects().name(o)) {
      throw ValidationError("score table: column '" + header[3 + na + o] +
                            "' does not match object '" + space.objects().name(o) + "'");
    }
  }
  ScoreTable t;
  t.space = space;
  std::vector<double> a_vals, o_vals;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ValidationError("score table line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(f.size()));
    }
    t.sample_ids.push_back(static_cast<std::uint64_t>(parse_double(f[0], line_no)));
    t.labels.push_back(lookup_label(space, f[1], f[2], "score table line " + std::to_string(line_no)));
    for (std::size_t a = 0; a < na; ++a) a_vals.push_back(parse_double(f[3 + a], line_no));
    for (std::size_t o = 0; o < no; ++o) o_vals.push_back(parse_double(f[3 + na + o], line_no));
  }
  t.rho_a = Matrix<double>(t.sample_ids.size(), na, std::move(a_vals));
  t.rho_o = Matrix<double>(t.sample_ids.size(), no, std::move(o_vals));
  t.validate();
  return t;
}

ScoreTable load_score_table(const std::string& path, const std::optional<CompositionSpace>& space) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open score table: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("score table " + path + ": " + e.what());
    }
    ScoreTable t = score_table_from_json(j);
    if (space && !space->same_labels(t.space)) {
      throw ValidationError("score table " + path + ": label sets differ from the given space");
    }
    return t;
  }
  if (!space) throw ValidationError("score table " + path + ": CSV input needs a space file");
  return score_table_from_csv(ss.str(), *space);
}

void save_score_table(const ScoreTable& table, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write score table: " + path);
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    f << score_table_to_json(table).dump(1) << '\n';
  } else {
    f << score_table_to_csv(table);
  }
}

}  // namespace mmpt
