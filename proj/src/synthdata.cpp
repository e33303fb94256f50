#include "seas/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>

#include "seas/image_io.hpp"

namespace seas {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DefectFamily family) {
  switch (family) {
    case DefectFamily::Scratch: return "scratch";
    case DefectFamily::Blob: return "blob";
    case DefectFamily::Hole: return "hole";
  }
  return "unknown";
}

DefectFamily defect_family_from_string(const std::string& name) {
  if (name == "scratch") return DefectFamily::Scratch;
  if (name == "blob") return DefectFamily::Blob;
  if (name == "hole") return DefectFamily::Hole;
  throw ParseError("unknown defect family '" + name + "'");
}

ProductSpec ProductSpec::toy(int num_types) {
  if (num_types < 1) throw ConfigError("a toy product needs at least one defect type");
  ProductSpec spec;
  for (int i = 0; i < num_types; ++i) {
    DefectSpec d;
    switch (i % 3) {
      case 0:
        d = {DefectFamily::Scratch, {0.05f, 0.05f, 0.1f}, {0.2f, 0.15f, 0.2f}, 5, 8};
        break;
      case 1:
        d = {DefectFamily::Blob, {0.6f, 0.15f, 0.1f}, {0.85f, 0.3f, 0.15f}, 5, 9};
        break;
      default:
        d = {DefectFamily::Hole, {0.02f, 0.02f, 0.02f}, {0.08f, 0.08f, 0.08f}, 4, 7};
        break;
    }
    spec.defect_types.push_back(d);
  }
  return spec;
}

void ProductSpec::validate() const {
  if (texture != "striped" && texture != "cellular") throw ConfigError("unknown texture '" + texture + "'");
  if (image_size < 8) throw ConfigError("image size must be at least 8");
  if (frequency <= 0) throw ConfigError("texture frequency must be positive");
  if (local_jitter < 0) throw ConfigError("local jitter must be nonnegative");
  for (const auto& d : defect_types)
    if (d.size_min < 1 || d.size_max < d.size_min) throw ConfigError("invalid defect size range");
}

void to_json(json& j, const ProductSpec& spec) {
  json defects = json::array();
  for (const auto& d : spec.defect_types)
    defects.push_back({{"family", to_string(d.family)},
                       {"color_lo", d.color_lo},
                       {"color_hi", d.color_hi},
                       {"size_min", d.size_min},
                       {"size_max", d.size_max}});
  j = {{"texture", spec.texture},       {"frequency", spec.frequency},       {"angle", spec.angle},
       {"palette", spec.palette},       {"local_jitter", spec.local_jitter}, {"image_size", spec.image_size},
       {"defect_types", defects}};
}

void from_json(const json& j, ProductSpec& spec) {
  spec = ProductSpec{};
  spec.texture = j.value("texture", spec.texture);
  spec.frequency = j.value("frequency", spec.frequency);
  spec.angle = j.value("angle", spec.angle);
  if (j.contains("palette")) spec.palette = j.at("palette").get<std::array<Color, 3>>();
  spec.local_jitter = j.value("local_jitter", spec.local_jitter);
  spec.image_size = j.value("image_size", spec.image_size);
  spec.defect_types.clear();
  for (const auto& d : j.at("defect_types")) {
    DefectSpec s;
    s.family = defect_family_from_string(d.at("family").get<std::string>());
    s.color_lo = d.at("color_lo").get<Color>();
    s.color_hi = d.at("color_hi").get<Color>();
    s.size_min = d.at("size_min").get<int>();
    s.size_max = d.at("size_max").get<int>();
    spec.defect_types.push_back(s);
  }
}

std::vector<const AnomalySample*> Corpus::abnormal_of_type(int type) const {
  std::vector<const AnomalySample*> out;
  for (const auto& s : abnormal)
    if (s.anomaly_type == type) out.push_back(&s);
  return out;
}

namespace {

using Rng64 = std::mt19937_64;

double uniform(Rng64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Base pattern value in [0, 1] plus the border weight for the third palette color.
void base_pattern(const ProductSpec& spec, double x, double y, double phase, double& mix, double& border) {
  const double n = spec.image_size;
  if (spec.texture == "striped") {
    const double u = (x * std::cos(spec.angle) + y * std::sin(spec.angle)) / n;
    mix = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * spec.frequency * u + phase);
    border = 0.0;
  } else {
    const double cell = n / spec.frequency;
    const double fx = std::fmod(x + phase * cell, cell) / cell, fy = std::fmod(y + phase * cell, cell) / cell;
    const double edge = std::min({fx, 1 - fx, fy, 1 - fy});
    mix = 0.5 + 0.5 * std::cos(2 * std::numbers::pi * (fx - 0.5)) * std::cos(2 * std::numbers::pi * (fy - 0.5));
    border = edge < 0.08 ? 1.0 : 0.0;
  }
}

Color pick_color(const DefectSpec& d, Rng64& rng) {
  Color c;
  for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = static_cast<float>(uniform(rng, d.color_lo[k], d.color_hi[k]));
  return c;
}

/// Marks pixels of a defect footprint; the caller paints them.
std::vector<std::uint8_t> defect_footprint(const DefectSpec& d, int n, Rng64& rng) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * n), 0);
  auto set = [&](int x, int y) {
    if (x >= 0 && y >= 0 && x < n && y < n) mask[static_cast<std::size_t>(y * n + x)] = 1;
  };
  const double margin = d.size_max + 2.0;
  const double cx = uniform(rng, margin, n - margin), cy = uniform(rng, margin, n - margin);
  const double size = uniform(rng, d.size_min, d.size_max + 1e-9);
  switch (d.family) {
    case DefectFamily::Scratch: {
      // Polyline through 3..4 vertices, 2 px thick.
      const int segments = std::uniform_int_distribution<int>(2, 3)(rng);
      double heading = uniform(rng, 0, 2 * std::numbers::pi);
      double px = cx, py = cy;
      const double half_width = 1.0;
      for (int s = 0; s < segments; ++s) {
        const double len = 1.5 * size;
        const double qx = std::clamp(px + len * std::cos(heading), 1.0, n - 2.0);
        const double qy = std::clamp(py + len * std::sin(heading), 1.0, n - 2.0);
        const int steps = static_cast<int>(std::ceil(std::hypot(qx - px, qy - py) * 2)) + 1;
        for (int k = 0; k <= steps; ++k) {
          const double t = static_cast<double>(k) / steps;
          const double x = px + t * (qx - px), y = py + t * (qy - py);
          for (int oy = -1; oy <= 1; ++oy)
            for (int ox = -1; ox <= 1; ++ox)
              if (std::hypot(ox, oy) <= half_width) set(static_cast<int>(std::lround(x)) + ox, static_cast<int>(std::lround(y)) + oy);
        }
        px = qx;
        py = qy;
        heading += uniform(rng, -0.7, 0.7);
      }
      break;
    }
    case DefectFamily::Blob: {
      const int parts = std::uniform_int_distribution<int>(2, 3)(rng);
      for (int p = 0; p < parts; ++p) {
        const double ex = cx + uniform(rng, -0.5, 0.5) * size, ey = cy + uniform(rng, -0.5, 0.5) * size;
        const double rx = size * uniform(rng, 0.5, 1.0), ry = size * uniform(rng, 0.5, 1.0);
        const double rot = uniform(rng, 0, std::numbers::pi);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const double dx = x - ex, dy = y - ey;
            const double u = dx * std::cos(rot) + dy * std::sin(rot), v = -dx * std::sin(rot) + dy * std::cos(rot);
            if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) set(x, y);
          }
      }
      break;
    }
    case DefectFamily::Hole: {
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (std::hypot(x - cx, y - cy) <= size) set(x, y);
      break;
    }
  }
  return mask;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t kind, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(kind), static_cast<std::uint32_t>(index)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

}  // namespace

AnomalySample render_sample(const ProductSpec& spec, int anomaly_type, std::uint64_t seed) {
  spec.validate();
  if (anomaly_type < 0 || anomaly_type > spec.num_types())
    throw RangeError("anomaly type " + std::to_string(anomaly_type) + " outside [0, " + std::to_string(spec.num_types()) + "]");
  Rng64 rng(seed);
  const int n = spec.image_size;
  AnomalySample s;
  s.anomaly_type = anomaly_type;
  s.seed = seed;
  s.image = Tensor<float>({3, n, n});
  s.mask = Tensor<float>({n, n});

  // Low-frequency local variation: small phase shift and a smooth brightness field.
  const double phase = uniform(rng, -0.08, 0.08);
  const double a1 = uniform(rng, -1, 1) * spec.local_jitter, a2 = uniform(rng, -1, 1) * spec.local_jitter;
  const double p1 = uniform(rng, 0, 2 * std::numbers::pi), p2 = uniform(rng, 0, 2 * std::numbers::pi);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double mix = 0, border = 0;
      base_pattern(spec, x, y, phase, mix, border);
      const double shade = a1 * std::cos(2 * std::numbers::pi * x / n + p1) + a2 * std::cos(2 * std::numbers::pi * y / n + p2);
      for (int c = 0; c < 3; ++c) {
        const auto k = static_cast<std::size_t>(c);
        double v = spec.palette[0][k] * (1 - mix) + spec.palette[1][k] * mix;
        v = v * (1 - border) + spec.palette[2][k] * border + shade;
        s.image[(c * n + y) * n + x] = static_cast<float>(v);
      }
    }

  if (anomaly_type > 0) {
    const DefectSpec& d = spec.defect_types[static_cast<std::size_t>(anomaly_type - 1)];
    const auto footprint = defect_footprint(d, n, rng);
    const Color color = pick_color(d, rng);
    for (int i = 0; i < n * n; ++i) {
      if (!footprint[static_cast<std::size_t>(i)]) continue;
      s.mask[i] = 1.0f;
      for (int c = 0; c < 3; ++c) s.image[c * n * n + i] = color[static_cast<std::size_t>(c)];
    }
  }
  quantize_to_8bit(s.image);
  return s;
}

Corpus make_corpus(const ProductSpec& spec, const CorpusCounts& counts, std::uint64_t seed) {
  spec.validate();
  if (counts.normal < 1) throw ConfigError("corpus needs at least one normal image");
  if (spec.num_types() > 0 && counts.abnormal_per_type < 1) throw ConfigError("corpus needs at least one abnormal image per type");
  Corpus corpus;
  corpus.spec = spec;
  corpus.seed = seed;
  for (int i = 0; i < counts.normal; ++i)
    corpus.normal.push_back(render_sample(spec, 0, derive_seed(seed, 0, static_cast<std::uint64_t>(i))));
  for (int t = 1; t <= spec.num_types(); ++t)
    for (int i = 0; i < counts.abnormal_per_type; ++i)
      corpus.abnormal.push_back(
          render_sample(spec, t, derive_seed(seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i))));
  return corpus;
}

void write_corpus(const Corpus& corpus, const fs::path& dir, bool force) {
  const fs::path manifest = dir / "manifest.jsonl";
  if (fs::exists(manifest) && !force) throw IoError(manifest.string() + " already exists; pass --force to overwrite");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  std::map<std::string, int> histogram;
  for (const auto& s : corpus.abnormal) histogram[std::to_string(s.anomaly_type)]++;
  histogram["0"] = static_cast<int>(corpus.normal.size());
  out << json{{"kind", "corpus"}, {"seed", corpus.seed}, {"spec", corpus.spec}, {"type_histogram", histogram}}.dump()
      << "\n";
  std::size_t index = 0;
  auto emit = [&](const AnomalySample& s) {
    const std::string name = index_name(index++);
    write_png_rgb(dir / "images" / name, s.image);
    json record{{"image", "images/" + name}, {"anomaly_type", s.anomaly_type}, {"seed", s.seed}};
    if (s.abnormal()) {
      write_png_mask(dir / "masks" / name, s.mask);
      record["mask"] = "masks/" + name;
    } else {
      record["mask"] = nullptr;
    }
    out << record.dump() << "\n";
  };
  for (const auto& s : corpus.normal) emit(s);
  for (const auto& s : corpus.abnormal) emit(s);
  if (!out) throw IoError("failed while writing " + manifest.string());
}

Corpus read_corpus(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (line_no == 1) {
        if (j.value("kind", "") != "corpus") throw ParseError("not a corpus manifest");
        corpus.seed = j.at("seed").get<std::uint64_t>();
        corpus.spec = j.at("spec").get<ProductSpec>();
        continue;
      }
      AnomalySample s;
      s.anomaly_type = j.at("anomaly_type").get<int>();
      s.seed = j.value("seed", std::uint64_t{0});
      s.image = read_png_rgb(dir / j.at("image").get<std::string>());
      if (s.anomaly_type > 0) {
        if (!j.contains("mask") || j["mask"].is_null())
          throw DataError("abnormal record without a mask");
        const fs::path mask_path = dir / j["mask"].get<std::string>();
        if (!fs::exists(mask_path)) throw DataError("missing mask file " + mask_path.string());
        s.mask = read_png_mask(mask_path);
        corpus.abnormal.push_back(std::move(s));
      } else {
        s.mask = Tensor<float>({s.image.dim(1), s.image.dim(2)});
        corpus.normal.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw ParseError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      const std::string where = manifest.string() + ":" + std::to_string(line_no) + ": " + e.what();
      if (e.kind() == "parse_error") throw ParseError(where);
      if (e.kind() == "data_error") throw DataError(where);
      if (e.kind() == "io_error") throw IoError(where);
      throw;
    }
  }
  if (line_no == 0) throw ParseError(manifest.string() + ":1: empty manifest");
  return corpus;
}

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> luminance(const AnomalySample& s, const std::vector<int>& pixels) {
  const int hw = s.image.dim(1) * s.image.dim(2);
  std::vector<double> out;
  for (int i : pixels) out.push_back((s.image[i] + s.image[hw + i] + s.image[2 * hw + i]) / 3.0);
  return out;
}

}  // namespace

ConsistencyReport consistency_check(const Corpus& corpus) {
  ConsistencyReport report;
  if (corpus.normal.empty()) return report;
  const int hw = corpus.normal.front().image.dim(1) * corpus.normal.front().image.dim(2);
  std::vector<int> all(static_cast<std::size_t>(hw));
  for (int i = 0; i < hw; ++i) all[static_cast<std::size_t>(i)] = i;
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < corpus.normal.size(); ++i)
    for (std::size_t j = i + 1; j < corpus.normal.size(); ++j) {
      sum += correlation(luminance(corpus.normal[i], all), luminance(corpus.normal[j], all));
      ++pairs;
    }
  report.normal_correlation = pairs ? sum / pairs : 1.0;

  // Defect pixels against the same pixels of other abnormal images.
  sum = 0;
  pairs = 0;
  for (std::size_t i = 0; i < corpus.abnormal.size(); ++i) {
    std::vector<int> region;
    for (int p = 0; p < hw; ++p)
      if (corpus.abnormal[i].mask[p] > 0.5f) region.push_back(p);
    for (std::size_t j = 0; j < corpus.abnormal.size(); ++j) {
      if (i == j) continue;
      sum += correlation(luminance(corpus.abnormal[i], region), luminance(corpus.abnormal[j], region));
      ++pairs;
    }
  }
  report.defect_correlation = pairs ? sum / pairs : 0.0;
  return report;
}

}  // namespace seas
