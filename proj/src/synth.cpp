#include "mismatch/synth.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mismatch/config.hpp"
#include "mismatch/error.hpp"
#include "mismatch/mmt.hpp"

namespace mismatch {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string to_string(DatasetKind kind) { return kind == DatasetKind::tubes ? "tubes" : "blobs"; }

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "tubes") return DatasetKind::tubes;
  if (name == "blobs") return DatasetKind::blobs;
  throw std::invalid_argument("unknown dataset kind '" + name + "'");
}

void validate(const DatasetSpec& s) {
  if (s.size < 32 || (s.size & (s.size - 1)) != 0) {
    throw ConfigError("size", "must be a power of two >= 32");
  }
  if (s.noise_sigma < 0.0) throw ConfigError("noise_sigma", "must be >= 0");
  if (s.min_curves < 1 || s.min_curves > s.max_curves) {
    throw ConfigError("min_curves", "need 1 <= min_curves <= max_curves");
  }
  if (!(s.min_thickness > 0.0) || s.min_thickness > s.max_thickness) {
    throw ConfigError("min_thickness", "need 0 < min_thickness <= max_thickness");
  }
  if (s.min_blobs < 1 || s.min_blobs > s.max_blobs) {
    throw ConfigError("min_blobs", "need 1 <= min_blobs <= max_blobs");
  }
  if (!(s.min_radius > 0.0) || s.min_radius > s.max_radius) {
    throw ConfigError("min_radius", "need 0 < min_radius <= max_radius");
  }
  if (!(s.min_foreground > 0.0) || s.min_foreground >= s.max_foreground || s.max_foreground > 1.0) {
    throw ConfigError("min_foreground", "need 0 < min_foreground < max_foreground <= 1");
  }
  if (s.max_retries < 1) throw ConfigError("max_retries", "must be >= 1");
}

namespace {

void stamp_disc(Map2D& mask, double cy, double cx, double radius) {
  const double r = std::max(radius, 0.5);
  const auto lo_i = static_cast<std::ptrdiff_t>(std::floor(cy - r));
  const auto hi_i = static_cast<std::ptrdiff_t>(std::ceil(cy + r));
  const auto lo_j = static_cast<std::ptrdiff_t>(std::floor(cx - r));
  const auto hi_j = static_cast<std::ptrdiff_t>(std::ceil(cx + r));
  for (auto i = std::max<std::ptrdiff_t>(lo_i, 0);
       i <= std::min<std::ptrdiff_t>(hi_i, static_cast<std::ptrdiff_t>(mask.height) - 1); ++i) {
    for (auto j = std::max<std::ptrdiff_t>(lo_j, 0);
         j <= std::min<std::ptrdiff_t>(hi_j, static_cast<std::ptrdiff_t>(mask.width) - 1); ++j) {
      const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
      if (dy * dy + dx * dx <= r * r) mask(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = 1.0;
    }
  }
}

Map2D draw_tubes(const DatasetSpec& spec, std::mt19937_64& rng) {
  const double size = static_cast<double>(spec.size);
  Map2D mask(spec.size, spec.size);
  std::uniform_int_distribution<std::size_t> curves(spec.min_curves, spec.max_curves);
  std::uniform_real_distribution<double> thickness(spec.min_thickness, spec.max_thickness);
  std::uniform_real_distribution<double> pos(0.0, size);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> length(0.75 * size, 1.5 * size);
  std::normal_distribution<double> bend(0.0, 0.04);
  const std::size_t n = curves(rng);
  for (std::size_t c = 0; c < n; ++c) {
    const double radius = 0.5 * thickness(rng);
    double y = pos(rng), x = pos(rng), heading = angle(rng), curvature = 0.0;
    const auto steps = static_cast<std::size_t>(length(rng) / 0.5);
    for (std::size_t s = 0; s < steps; ++s) {
      // Low-pass filtered curvature gives smooth, vessel-like bends.
      curvature = 0.9 * curvature + bend(rng);
      heading += curvature;
      y += 0.5 * std::sin(heading);
      x += 0.5 * std::cos(heading);
      stamp_disc(mask, y, x, radius);
    }
  }
  return mask;
}

Map2D draw_blobs(const DatasetSpec& spec, std::mt19937_64& rng) {
  const double size = static_cast<double>(spec.size);
  Map2D mask(spec.size, spec.size);
  std::uniform_int_distribution<std::size_t> blobs(spec.min_blobs, spec.max_blobs);
  std::uniform_real_distribution<double> axis(spec.min_radius, spec.max_radius);
  std::uniform_real_distribution<double> pos(0.0, size);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  const std::size_t n = blobs(rng);
  for (std::size_t b = 0; b < n; ++b) {
    const double cy = pos(rng), cx = pos(rng), a = axis(rng), r = axis(rng), t = angle(rng);
    const double ct = std::cos(t), st = std::sin(t);
    for (std::size_t i = 0; i < spec.size; ++i) {
      for (std::size_t j = 0; j < spec.size; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / r;
        if (u * u + v * v <= 1.0) mask(i, j) = 1.0;
      }
    }
  }
  return mask;
}

Map2D render_image(const Map2D& mask, double noise_sigma, std::mt19937_64& rng) {
  const std::size_t h = mask.height, w = mask.width;
  std::uniform_real_distribution<double> contrast(0.6, 1.0);
  std::uniform_real_distribution<double> slope(-0.5, 0.5);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  const double c = contrast(rng), gy = slope(rng), gx = slope(rng);

  // Separable [1 2 1]/4 blur, edge-clamped.
  auto clamp = [](std::ptrdiff_t v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  Map2D tmp(h, w), blurred(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto jj = static_cast<std::ptrdiff_t>(j);
      tmp(i, j) = 0.25 * mask(i, clamp(jj - 1, w)) + 0.5 * mask(i, j) + 0.25 * mask(i, clamp(jj + 1, w));
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    for (std::size_t j = 0; j < w; ++j) {
      blurred(i, j) = 0.25 * tmp(clamp(ii - 1, h), j) + 0.5 * tmp(i, j) + 0.25 * tmp(clamp(ii + 1, h), j);
    }
  }

  Map2D image(h, w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double ramp = gy * (static_cast<double>(i) / static_cast<double>(h) - 0.5) +
                          gx * (static_cast<double>(j) / static_cast<double>(w) - 0.5);
      image(i, j) = c * blurred(i, j) + ramp + noise(rng);
    }
  }

  double mu = 0.0;
  for (double v : image.values) mu += v;
  mu /= static_cast<double>(image.values.size());
  double var = 0.0;
  for (double v : image.values) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(image.values.size()));
  for (auto& v : image.values) {
    // Rounded to float32 so that MMT1 files reproduce samples exactly.
    v = static_cast<double>(static_cast<float>((v - mu) / (sd > 0.0 ? sd : 1.0)));
  }
  return image;
}

}  // namespace

Sample generate_sample(const DatasetSpec& spec, std::size_t id) {
  validate(spec);
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(spec.kind)};
  std::mt19937_64 rng(seq);
  const double pixels = static_cast<double>(spec.size * spec.size);
  for (std::size_t attempt = 0; attempt < spec.max_retries; ++attempt) {
    Map2D mask = spec.kind == DatasetKind::tubes ? draw_tubes(spec, rng) : draw_blobs(spec, rng);
    double fg = 0.0;
    for (double v : mask.values) fg += v;
    const double fraction = fg / pixels;
    if (fg < 1.0 || fraction < spec.min_foreground || fraction > spec.max_foreground) continue;
    Sample s;
    s.id = id;
    s.image = render_image(mask, spec.noise_sigma, rng);
    s.mask = std::move(mask);
    return s;
  }
  throw std::runtime_error("generate_sample: foreground fraction band [" +
                           std::to_string(spec.min_foreground) + ", " +
                           std::to_string(spec.max_foreground) + "] not reached for sample " +
                           std::to_string(id) + " after " + std::to_string(spec.max_retries) +
                           " retries");
}

Dataset generate_dataset(const DatasetSpec& spec) {
  validate(spec);
  Dataset d;
  d.spec = spec;
  std::size_t id = 0;
  auto fill = [&](std::vector<Sample>& split, std::size_t n) {
    split.reserve(n);
    for (std::size_t i = 0; i < n; ++i) split.push_back(generate_sample(spec, id++));
  };
  fill(d.labeled, spec.labeled);
  fill(d.unlabeled, spec.unlabeled);
  fill(d.validation, spec.validation);
  fill(d.test, spec.test);
  return d;
}

std::string sample_stem(std::size_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id;
  return os.str();
}

void write_sample(const Sample& sample, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  const auto stem = sample_stem(sample.id);
  write_mmt(dir / "images" / (stem + ".mmt"), {sample.image.height, sample.image.width},
            sample.image.values);
  write_mmt(dir / "masks" / (stem + ".mmt"), {sample.mask.height, sample.mask.width},
            sample.mask.values);
  const json side{{"id", sample.id},
                  {"height", sample.image.height},
                  {"width", sample.image.width},
                  {"format", "MMT1"}};
  std::ofstream out(dir / "images" / (stem + ".json"));
  if (!out) throw std::runtime_error("cannot write sidecar for sample " + stem);
  out << side.dump(2) << '\n';
}

Sample read_sample(const fs::path& dir, std::size_t id) {
  const auto stem = sample_stem(id);
  std::ifstream side_in(dir / "images" / (stem + ".json"));
  if (!side_in) throw FormatError("sample " + stem + ": missing metadata sidecar");
  const json side = json::parse(side_in);
  const auto h = side.at("height").get<std::size_t>();
  const auto w = side.at("width").get<std::size_t>();
  if (side.at("id").get<std::size_t>() != id) throw FormatError("sample " + stem + ": id mismatch");

  auto img = read_mmt(dir / "images" / (stem + ".mmt"));
  auto msk = read_mmt(dir / "masks" / (stem + ".mmt"));
  const Shape expected{h, w};
  if (img.shape != expected) throw FormatError("sample " + stem + ": image shape mismatch");
  if (msk.shape != expected) throw FormatError("sample " + stem + ": mask shape mismatch");
  for (double v : msk.values) {
    if (v != 0.0 && v != 1.0) throw FormatError("sample " + stem + ": non-binary mask");
  }
  Sample s;
  s.id = id;
  s.image = Map2D(h, w);
  s.image.values = std::move(img.values);
  s.mask = Map2D(h, w);
  s.mask.values = std::move(msk.values);
  return s;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  json splits = json::object();
  auto emit = [&](const char* name, const std::vector<Sample>& split) {
    json ids = json::array();
    for (const auto& s : split) {
      write_sample(s, dir);
      ids.push_back(s.id);
    }
    splits[name] = ids;
  };
  emit("labeled", dataset.labeled);
  emit("unlabeled", dataset.unlabeled);
  emit("validation", dataset.validation);
  emit("test", dataset.test);
  const json meta{{"format_version", 1}, {"spec", to_json(dataset.spec)}, {"splits", splits}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw std::runtime_error("no meta.json in '" + dir.string() + "'");
  const json meta = json::parse(in);
  if (meta.at("format_version").get<int>() != 1) {
    throw FormatError("unsupported dataset format version");
  }
  Dataset d;
  d.spec = dataset_spec_from_json(meta.at("spec"));
  const auto& splits = meta.at("splits");
  auto load = [&](const char* name, std::vector<Sample>& split) {
    for (const auto& id : splits.at(name)) split.push_back(read_sample(dir, id.get<std::size_t>()));
  };
  load("labeled", d.labeled);
  load("unlabeled", d.unlabeled);
  load("validation", d.validation);
  load("test", d.test);
  return d;
}

Tensor stack_maps(std::span<const Map2D* const> maps) {
  if (maps.empty()) throw ShapeError("stack_maps: empty batch");
  const std::size_t h = maps[0]->height, w = maps[0]->width;
  std::vector<double> values;
  values.reserve(maps.size() * h * w);
  for (const Map2D* m : maps) {
    if (m->height != h || m->width != w) throw ShapeError("stack_maps: ragged batch");
    values.insert(values.end(), m->values.begin(), m->values.end());
  }
  return Tensor::from({maps.size(), 1, h, w}, std::move(values));
}

Tensor stack_images(std::span<const Sample> samples) {
  std::vector<const Map2D*> maps;
  for (const auto& s : samples) maps.push_back(&s.image);
  return stack_maps(maps);
}

Tensor stack_masks(std::span<const Sample> samples) {
  std::vector<const Map2D*> maps;
  for (const auto& s : samples) maps.push_back(&s.mask);
  return stack_maps(maps);
}

}  // namespace mismatch
