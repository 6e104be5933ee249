#include "mmpt/synthetic_data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mmpt/errors.hpp"
#include "mmpt/hashing.hpp"
#include "mmpt/params.hpp"

namespace mmpt {

namespace fs = std::filesystem;

namespace {

constexpr ShapeKind kAllKinds[] = {ShapeKind::disc,    ShapeKind::square, ShapeKind::triangle,
                                   ShapeKind::hbars,   ShapeKind::vbars,  ShapeKind::ring,
                                   ShapeKind::cross,   ShapeKind::diamond, ShapeKind::halfdisc,
                                   ShapeKind::frame};

// Normalized shape coordinates: p (x) and q (y) in roughly [-1, 1].
bool inside(ShapeKind kind, double p, double q) {
  const double ap = std::abs(p), aq = std::abs(q);
  switch (kind) {
    case ShapeKind::disc:
      return p * p + q * q <= 1.0;
    case ShapeKind::square:
      return ap <= 0.8 && aq <= 0.8;
    case ShapeKind::triangle:
      return q >= -0.9 && q <= 0.9 && ap <= (q + 0.9) / 1.8;
    case ShapeKind::hbars:
      return ap <= 0.95 && aq <= 1.0 && static_cast<int>(std::floor((q + 1.0) * 2.5)) % 2 == 0;
    case ShapeKind::vbars:
      return aq <= 0.95 && ap <= 1.0 && static_cast<int>(std::floor((p + 1.0) * 2.5)) % 2 == 0;
    case ShapeKind::ring: {
      const double r2 = p * p + q * q;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    case ShapeKind::cross:
      return (ap <= 0.3 && aq <= 1.0) || (aq <= 0.3 && ap <= 1.0);
    case ShapeKind::diamond:
      return ap + aq <= 1.0;
    case ShapeKind::halfdisc: {
      const double q2 = q + 0.5;
      return q2 >= 0.0 && p * p + q2 * q2 <= 1.0;
    }
    case ShapeKind::frame: {
      const double m = std::max(ap, aq);
      return m <= 0.9 && m >= 0.5;
    }
  }
  return false;
}

struct Placement {
  double cx, cy, radius;
};

Placement draw_placement(const RenderSpec& spec, const ObjectShape& shape, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x6a69747465720000ULL));  // "jitter"
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double dx = unit(rng) * spec.jitter.position;
  const double dy = unit(rng) * spec.jitter.position;
  const double ds = unit(rng) * spec.jitter.scale;
  return {shape.center_x + dx, shape.center_y + dy, shape.radius * (1.0 + ds)};
}

// Fixed per-attribute texture noise in [-1, 1], a pure function of position.
double texture_noise(std::size_t attribute, std::size_t y, std::size_t x, std::size_t c) {
  const std::uint64_t h = derive_seed(0x7465787475726500ULL + attribute, y, x, c);
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

std::array<double, 3> hue_color(double hue) {
  // HSV with s=0.85, v=0.9
  const double s = 0.85, v = 0.9;
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

std::string shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::disc: return "disc";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::hbars: return "hbars";
    case ShapeKind::vbars: return "vbars";
    case ShapeKind::ring: return "ring";
    case ShapeKind::cross: return "cross";
    case ShapeKind::diamond: return "diamond";
    case ShapeKind::halfdisc: return "halfdisc";
    case ShapeKind::frame: return "frame";
  }
  return "disc";
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (ShapeKind k : kAllKinds) {
    if (shape_kind_name(k) == name) return k;
  }
  throw ValidationError("unknown shape kind: " + name);
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValidationError("unknown split: " + name);
}

void RenderSpec::validate() const {
  if (height == 0 || width == 0 || channels != 3) {
    throw ValidationError("render spec: image must be HxWx3 with H, W > 0");
  }
  if (patch_size == 0 || height % patch_size != 0 || width % patch_size != 0) {
    throw ValidationError("render spec: image " + std::to_string(height) + "x" +
                          std::to_string(width) + " is not divisible by patch size " +
                          std::to_string(patch_size));
  }
  if (jitter.position < 0 || jitter.scale < 0) {
    throw ValidationError("render spec: jitter ranges must be non-negative");
  }
  if (object_shapes.empty() || attribute_styles.empty()) {
    throw ValidationError("render spec: needs at least one object shape and attribute style");
  }
}

RenderSpec default_render_spec(std::size_t n_attributes, std::size_t n_objects,
                               std::size_t image_size, std::size_t patch_size) {
  static const std::array<double, 3> kPalette[] = {
      {0.90, 0.10, 0.10},  // red
      {0.10, 0.80, 0.10},  // green
      {0.10, 0.20, 0.90},  // blue
      {0.90, 0.90, 0.10},  // yellow
      {0.90, 0.10, 0.90},  // magenta
      {0.10, 0.90, 0.90},  // cyan
      {1.00, 0.55, 0.00},  // orange
      {0.45, 0.10, 0.60},  // purple
  };
  RenderSpec spec;
  spec.height = spec.width = image_size;
  spec.patch_size = patch_size;
  spec.jitter = {0.06, 0.10};
  for (std::size_t o = 0; o < n_objects; ++o) {
    ObjectShape s;
    s.kind = kAllKinds[o % std::size(kAllKinds)];
    // Beyond the ten base kinds, reuse kinds at a smaller size.
    s.radius = 0.32 * std::pow(0.75, static_cast<double>(o / std::size(kAllKinds)));
    spec.object_shapes.push_back(s);
  }
  for (std::size_t a = 0; a < n_attributes; ++a) {
    AttributeStyle st;
    st.color = a < std::size(kPalette)
                   ? kPalette[a]
                   : hue_color(std::fmod(0.618033988749895 * static_cast<double>(a), 1.0));
    st.stripe_frequency = static_cast<double>((a % 3) * 2);
    st.noise_amplitude = 0.05;
    spec.attribute_styles.push_back(st);
  }
  return spec;
}

nlohmann::json render_spec_to_json(const RenderSpec& spec) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : spec.object_shapes) {
    shapes.push_back({{"kind", shape_kind_name(s.kind)},
                      {"radius", s.radius},
                      {"center_x", s.center_x},
                      {"center_y", s.center_y}});
  }
  nlohmann::json styles = nlohmann::json::array();
  for (const auto& st : spec.attribute_styles) {
    styles.push_back({{"color", st.color},
                      {"stripe_frequency", st.stripe_frequency},
                      {"noise_amplitude", st.noise_amplitude}});
  }
  return {{"height", spec.height},
          {"width", spec.width},
          {"channels", spec.channels},
          {"patch_size", spec.patch_size},
          {"background", spec.background},
          {"jitter", {{"position", spec.jitter.position}, {"scale", spec.jitter.scale}}},
          {"object_shapes", shapes},
          {"attribute_styles", styles}};
}

RenderSpec render_spec_from_json(const nlohmann::json& j) {
  RenderSpec spec;
  try {
    spec.height = j.at("height").get<std::size_t>();
    spec.width = j.at("width").get<std::size_t>();
    spec.channels = j.at("channels").get<std::size_t>();
    spec.patch_size = j.at("patch_size").get<std::size_t>();
    spec.background = j.at("background").get<double>();
    spec.jitter.position = j.at("jitter").at("position").get<double>();
    spec.jitter.scale = j.at("jitter").at("scale").get<double>();
    for (const auto& s : j.at("object_shapes")) {
      spec.object_shapes.push_back({parse_shape_kind(s.at("kind").get<std::string>()),
                                    s.at("radius").get<double>(), s.at("center_x").get<double>(),
                                    s.at("center_y").get<double>()});
    }
    for (const auto& st : j.at("attribute_styles")) {
      spec.attribute_styles.push_back({st.at("color").get<std::array<double, 3>>(),
                                       st.at("stripe_frequency").get<double>(),
                                       st.at("noise_amplitude").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("render spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string render_spec_hash(const RenderSpec& spec) {
  return hex64(fnv1a64(render_spec_to_json(spec).dump()));
}

std::vector<char> render_mask(const RenderSpec& spec, std::size_t object_idx,
                              std::uint64_t seed) {
  spec.validate();
  if (object_idx >= spec.object_shapes.size()) {
    throw ValidationError("render: object index " + std::to_string(object_idx) +
                          " out of range (" + std::to_string(spec.object_shapes.size()) + ")");
  }
  const ObjectShape& shape = spec.object_shapes[object_idx];
  const Placement pl = draw_placement(spec, shape, seed);
  std::vector<char> mask(spec.height * spec.width, 0);
  for (std::size_t y = 0; y < spec.height; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(spec.height);
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(spec.width);
      mask[y * spec.width + x] = inside(shape.kind, (u - pl.cx) / pl.radius,
                                        (v - pl.cy) / pl.radius)
                                     ? 1
                                     : 0;
    }
  }
  return mask;
}

ImageSample render(const RenderSpec& spec, std::size_t attribute_idx, std::size_t object_idx,
                   std::uint64_t seed) {
  if (attribute_idx >= spec.attribute_styles.size()) {
    throw ValidationError("render: attribute index " + std::to_string(attribute_idx) +
                          " out of range (" + std::to_string(spec.attribute_styles.size()) +
                          ")");
  }
  const std::vector<char> mask = render_mask(spec, object_idx, seed);
  const AttributeStyle& style = spec.attribute_styles[attribute_idx];

  ImageSample s;
  s.label = {attribute_idx, object_idx};
  s.image.height = spec.height;
  s.image.width = spec.width;
  s.image.channels = spec.channels;
  s.image.pixels.assign(spec.height * spec.width * spec.channels,
                        static_cast<float>(spec.background));
  for (std::size_t y = 0; y < spec.height; ++y) {
    const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(spec.height);
    for (std::size_t x = 0; x < spec.width; ++x) {
      if (!mask[y * spec.width + x]) continue;
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(spec.width);
      double shade = 1.0;
      if (style.stripe_frequency > 0) {
        const double phase = 2.0 * std::numbers::pi * style.stripe_frequency * (u + v);
        shade = 1.0 - 0.35 * 0.5 * (1.0 + std::sin(phase));
      }
      for (std::size_t c = 0; c < spec.channels; ++c) {
        double val = style.color[c] * shade +
                     style.noise_amplitude * texture_noise(attribute_idx, y, x, c);
        val = std::clamp(val, 0.0, 1.0);
        s.image.pixels[(y * spec.width + x) * spec.channels + c] = static_cast<float>(val);
      }
    }
  }
  return s;
}

DatasetSplits make_dataset(const CompositionSpace& space, const RenderSpec& spec,
                           std::size_t n_per_seen_train, std::size_t n_per_pair_eval,
                           std::uint64_t seed) {
  if (!space.splits_assigned()) throw ValidationError("make_dataset: splits not assigned");
  if (space.seen().empty()) throw ValidationError("make_dataset: seen split is empty");
  spec.validate();
  if (spec.object_shapes.size() != space.objects().size() ||
      spec.attribute_styles.size() != space.attributes().size()) {
    throw ValidationError("make_dataset: render spec has " +
                          std::to_string(spec.attribute_styles.size()) + " styles / " +
                          std::to_string(spec.object_shapes.size()) + " shapes but space is " +
                          std::to_string(space.attributes().size()) + "x" +
                          std::to_string(space.objects().size()));
  }
  const std::string hash = render_spec_hash(spec);
  std::uint64_t next_id = 0;
  auto build = [&](Split split, const std::vector<Composition>& pairs, std::size_t per_pair) {
    Dataset d;
    d.space = space;
    d.split = split;
    d.spec_hash = hash;
    d.samples.reserve(pairs.size() * per_pair);
    for (const auto& c : pairs) {
      for (std::size_t i = 0; i < per_pair; ++i) {
        const std::uint64_t s =
            derive_seed(seed, static_cast<std::uint64_t>(split), space.flat_index(c), i);
        ImageSample sample = render(spec, c.attribute, c.object, s);
        sample.sample_id = next_id++;
        d.samples.push_back(std::move(sample));
      }
    }
    return d;
  };
  auto with_unseen = [&](const std::vector<Composition>& unseen) {
    std::vector<Composition> v = space.seen();
    v.insert(v.end(), unseen.begin(), unseen.end());
    std::sort(v.begin(), v.end());
    return v;
  };
  DatasetSplits out;
  out.train = build(Split::train, space.seen(), n_per_seen_train);
  out.val = build(Split::val, with_unseen(space.unseen_val()), n_per_pair_eval);
  out.test = build(Split::test, with_unseen(space.unseen_test()), n_per_pair_eval);
  return out;
}

namespace {

void write_f32_le(std::ofstream& out, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
  } else {
    for (float f : v) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

void read_f32_le(const char* src, std::size_t n, float* dst) {
  std::memcpy(dst, src, n * sizeof(float));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(dst[i])));
    }
  }
}

}  // namespace

void export_dataset(const Dataset& dataset, const std::string& dir) {
  fs::create_directories(dir);
  std::size_t h = 0, w = 0, c = 0;
  if (!dataset.samples.empty()) {
    h = dataset.samples.front().image.height;
    w = dataset.samples.front().image.width;
    c = dataset.samples.front().image.channels;
  }
  save_space(dataset.space, (fs::path(dir) / "space.json").string());

  std::ofstream px(fs::path(dir) / "samples.f32", std::ios::binary);
  std::ofstream labels(fs::path(dir) / "labels.csv");
  if (!px || !labels) throw ValidationError("export_dataset: cannot write into " + dir);
  labels << "sample_id,attribute,object\n";
  for (const auto& s : dataset.samples) {
    if (s.image.height != h || s.image.width != w || s.image.channels != c) {
      throw ValidationError("export_dataset: samples have inconsistent image shapes");
    }
    write_f32_le(px, s.image.pixels);
    labels << s.sample_id << "," << dataset.space.attributes().name(s.label.attribute) << ","
           << dataset.space.objects().name(s.label.object) << "\n";
  }

  nlohmann::json manifest = {{"format", "mmpt-dataset-v1"},
                             {"spec_hash", dataset.spec_hash},
                             {"space_file", "space.json"},
                             {"split", split_name(dataset.split)},
                             {"count", dataset.samples.size()},
                             {"height", h},
                             {"width", w},
                             {"channels", c},
                             {"dataset_hash", dataset_hash(dataset)}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

Dataset import_dataset(const std::string& dir) {
  const fs::path root(dir);
  nlohmann::json manifest;
  {
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw CorruptionError("dataset " + dir + ": manifest.json is missing");
    try {
      mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError("dataset " + dir + ": manifest.json is not valid JSON");
    }
  }
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!manifest.contains(name)) {
      throw CorruptionError(std::string("dataset manifest: missing field '") + name + "'");
    }
    return manifest.at(name);
  };
  auto count_field = [&](const char* name) {
    const auto& v = field(name);
    if (!v.is_number_unsigned()) {
      throw CorruptionError(std::string("dataset manifest: field '") + name +
                            "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  };
  if (!field("format").is_string() || field("format").get<std::string>() != "mmpt-dataset-v1") {
    throw CorruptionError("dataset manifest: field 'format' is not mmpt-dataset-v1");
  }
  if (!field("spec_hash").is_string() || !field("space_file").is_string() ||
      !field("split").is_string()) {
    throw CorruptionError("dataset manifest: fields 'spec_hash', 'space_file', 'split' must be strings");
  }
  const std::size_t count = count_field("count");
  const std::size_t h = count_field("height"), w = count_field("width"),
                    c = count_field("channels");

  Dataset d;
  d.spec_hash = field("spec_hash").get<std::string>();
  d.split = parse_split(field("split").get<std::string>());
  d.space = load_space((root / field("space_file").get<std::string>()).string());

  const std::size_t per = h * w * c;
  std::ifstream px(root / "samples.f32", std::ios::binary);
  if (!px) throw CorruptionError("dataset " + dir + ": samples.f32 is missing");
  std::vector<char> bytes((std::istreambuf_iterator<char>(px)), std::istreambuf_iterator<char>());
  const std::size_t expected = count * per * sizeof(float);
  if (bytes.size() != expected) {
    throw CorruptionError("dataset " + dir + ": samples.f32 holds " +
                          std::to_string(bytes.size()) + " bytes, manifest implies " +
                          std::to_string(expected));
  }

  std::ifstream labels(root / "labels.csv");
  if (!labels) throw CorruptionError("dataset " + dir + ": labels.csv is missing");
  std::string line;
  std::getline(labels, line);
  if (line != "sample_id,attribute,object") {
    throw CorruptionError("dataset " + dir + ": labels.csv has an unexpected header");
  }
  std::size_t row = 0;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    if (row >= count) {
      throw CorruptionError("dataset " + dir + ": labels.csv has more rows than manifest count " +
                            std::to_string(count));
    }
    std::stringstream ss(line);
    std::string id, attr, obj;
    std::getline(ss, id, ',');
    std::getline(ss, attr, ',');
    std::getline(ss, obj, ',');
    auto comp = d.space.lookup(attr, obj);
    if (!comp) {
      throw CorruptionError("dataset " + dir + ": labels.csv row " + std::to_string(row + 1) +
                            " names unknown pair (" + attr + ", " + obj + ")");
    }
    ImageSample s;
    try {
      s.sample_id = std::stoull(id);
    } catch (const std::exception&) {
      throw CorruptionError("dataset " + dir + ": labels.csv row " + std::to_string(row + 1) +
                            " has a bad sample_id");
    }
    s.label = *comp;
    s.image.height = h;
    s.image.width = w;
    s.image.channels = c;
    s.image.pixels.resize(per);
    read_f32_le(bytes.data() + row * per * sizeof(float), per, s.image.pixels.data());
    d.samples.push_back(std::move(s));
    ++row;
  }
  if (row != count) {
    throw CorruptionError("dataset " + dir + ": labels.csv has " + std::to_string(row) +
                          " rows, manifest count is " + std::to_string(count));
  }
  return d;
}

std::string dataset_hash(const Dataset& dataset) {
  std::uint64_t h = fnv1a64(split_name(dataset.split));
  h = fnv1a64(space_to_json(dataset.space).dump(), h);
  for (const auto& s : dataset.samples) {
    const std::uint64_t header[3] = {s.sample_id, s.label.attribute, s.label.object};
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(header), sizeof header), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(s.image.pixels.data()),
                                 s.image.pixels.size() * sizeof(float)),
                h);
  }
  return hex64(h);
}

}  // namespace mmpt
