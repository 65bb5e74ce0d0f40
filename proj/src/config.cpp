#include "mismatch/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

#include "mismatch/error.hpp"

namespace mismatch {

namespace fs = std::filesystem;

namespace {

/// Reads keys out of one JSON object and remembers which were consumed, so
/// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    const json* v = take(key);
    if (!v) return;
    const std::string field = name(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) throw ConfigError(field, "expected a boolean");
      out = v->get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_unsigned()) throw ConfigError(field, "expected a non-negative integer");
      out = v->get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw ConfigError(field, "expected a number");
      out = v->get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v->is_string()) throw ConfigError(field, "expected a string");
      out = v->get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!v->is_array()) throw ConfigError(field, "expected an array");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) throw ConfigError(field, "expected non-negative integers");
        out.push_back(e.get<std::uint64_t>());
      }
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  template <class E, class Parse>
  void read_enum(const char* key, E& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!j_.contains(key)) return;
    try {
      out = parse(text);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(name(key), e.what());
    }
  }

  /// Sub-object for a nested section, or null when absent.
  const json* child(const char* key) { return take(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!consumed_.contains(key)) throw ConfigError(name(key), "unknown key");
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* take(const char* key) {
    consumed_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

/// Re-labels a validation failure with the section prefix.
template <class F>
void validate_in(const std::string& section, F&& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    throw ConfigError(section + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
  }
}

NetworkConfig read_network(const json& j, const std::string& path) {
  NetworkConfig c;
  Section s(j, path);
  s.read("width", c.width);
  s.read("depth", c.depth);
  s.read("dilation_rate", c.dilation_rate);
  s.read_enum("decoder1_kind", c.decoder1_kind, parse_block_kind);
  s.read_enum("decoder2_kind", c.decoder2_kind, parse_block_kind);
  s.read_enum("attention_mode", c.attention_mode, parse_attention_mode);
  s.read("in_channels", c.in_channels);
  s.read("out_classes", c.out_classes);
  s.read("input_size", c.input_size);
  s.read("heads", c.heads);
  s.read_enum("decoder1_morph", c.decoder1_morph, parse_feature_morph);
  s.read_enum("decoder2_morph", c.decoder2_morph, parse_feature_morph);
  s.read("morph_radius", c.morph_radius);
  s.finish();
  validate_in(path, [&] { validate(c); });
  return c;
}

TrainConfig read_train(const json& j, const std::string& path) {
  TrainConfig c;
  Section s(j, path);
  s.read("alpha", c.alpha);
  s.read("lr", c.lr);
  s.read("epochs", c.epochs);
  s.read("batch_size", c.batch_size);
  s.read_enum("regime", c.regime, parse_regime);
  s.read("stop_gradient", c.stop_gradient);
  s.read("batch_dim_normalize", c.batch_dim_normalize);
  s.read("avg_last_k", c.avg_last_k);
  s.read("seed", c.seed);
  s.read("consistency_term", c.consistency_term);
  s.read("augment", c.augment);
  s.read("augment_noise_sigma", c.augment_noise_sigma);
  s.read_enum("averaging", c.averaging, parse_averaging);
  s.finish();
  validate_in(path, [&] { validate(c); });
  return c;
}

DatasetSpec read_data(const json& j, const std::string& path) {
  DatasetSpec c;
  Section s(j, path);
  s.read_enum("kind", c.kind, parse_dataset_kind);
  s.read("size", c.size);
  s.read("seed", c.seed);
  s.read("noise_sigma", c.noise_sigma);
  s.read("min_curves", c.min_curves);
  s.read("max_curves", c.max_curves);
  s.read("min_thickness", c.min_thickness);
  s.read("max_thickness", c.max_thickness);
  s.read("min_blobs", c.min_blobs);
  s.read("max_blobs", c.max_blobs);
  s.read("min_radius", c.min_radius);
  s.read("max_radius", c.max_radius);
  s.read("min_foreground", c.min_foreground);
  s.read("max_foreground", c.max_foreground);
  s.read("max_retries", c.max_retries);
  s.read("labeled", c.labeled);
  s.read("unlabeled", c.unlabeled);
  s.read("validation", c.validation);
  s.read("test", c.test);
  s.finish();
  validate_in(path, [&] { validate(c); });
  return c;
}

ErfConfig read_erf(const json& j, const std::string& path) {
  ErfConfig c;
  Section s(j, path);
  s.read("seeds", c.seeds);
  s.read("input_size", c.input_size);
  s.read("threshold", c.threshold);
  s.read("max_plain_depth", c.max_plain_depth);
  s.read("prefix_depth", c.prefix_depth);
  s.read("channels", c.channels);
  s.read_enum("mode", c.mode, parse_erf_mode);
  s.finish();
  if (c.seeds.empty()) throw ConfigError(s.name("seeds"), "must not be empty");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError(s.name("threshold"), "must be in (0,1)");
  if (c.max_plain_depth < 1) throw ConfigError(s.name("max_plain_depth"), "must be >= 1");
  if (c.channels < 1) throw ConfigError(s.name("channels"), "must be >= 1");
  if (c.input_size < 8) throw ConfigError(s.name("input_size"), "must be >= 8");
  return c;
}

CalibrateConfig read_calibrate(const json& j, const std::string& path) {
  CalibrateConfig c;
  Section s(j, path);
  s.read("bins", c.bins);
  s.read("lo", c.lo);
  s.read("hi", c.hi);
  s.finish();
  if (c.bins < 1) throw ConfigError(s.name("bins"), "must be >= 1");
  if (!(c.lo >= 0.5 && c.lo < c.hi && c.hi <= 1.0)) {
    throw ConfigError(s.name("lo"), "need 0.5 <= lo < hi <= 1");
  }
  return c;
}

AblateConfig read_ablate(const json& j, const std::string& path) {
  AblateConfig c;
  Section s(j, path);
  s.read("grid", c.grid);
  s.read("seeds", c.seeds);
  s.finish();
  if (c.seeds < 1) throw ConfigError(s.name("seeds"), "must be >= 1");
  return c;
}

}  // namespace

json to_json(const NetworkConfig& c) {
  return json{{"width", c.width},
              {"depth", c.depth},
              {"dilation_rate", c.dilation_rate},
              {"decoder1_kind", to_string(c.decoder1_kind)},
              {"decoder2_kind", to_string(c.decoder2_kind)},
              {"attention_mode", to_string(c.attention_mode)},
              {"in_channels", c.in_channels},
              {"out_classes", c.out_classes},
              {"input_size", c.input_size},
              {"heads", c.heads},
              {"decoder1_morph", to_string(c.decoder1_morph)},
              {"decoder2_morph", to_string(c.decoder2_morph)},
              {"morph_radius", c.morph_radius}};
}

json to_json(const TrainConfig& c) {
  return json{{"alpha", c.alpha},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"regime", to_string(c.regime)},
              {"stop_gradient", c.stop_gradient},
              {"batch_dim_normalize", c.batch_dim_normalize},
              {"avg_last_k", c.avg_last_k},
              {"seed", c.seed},
              {"consistency_term", c.consistency_term},
              {"augment", c.augment},
              {"augment_noise_sigma", c.augment_noise_sigma},
              {"averaging", to_string(c.averaging)}};
}

json to_json(const DatasetSpec& c) {
  return json{{"kind", to_string(c.kind)},
              {"size", c.size},
              {"seed", c.seed},
              {"noise_sigma", c.noise_sigma},
              {"min_curves", c.min_curves},
              {"max_curves", c.max_curves},
              {"min_thickness", c.min_thickness},
              {"max_thickness", c.max_thickness},
              {"min_blobs", c.min_blobs},
              {"max_blobs", c.max_blobs},
              {"min_radius", c.min_radius},
              {"max_radius", c.max_radius},
              {"min_foreground", c.min_foreground},
              {"max_foreground", c.max_foreground},
              {"max_retries", c.max_retries},
              {"labeled", c.labeled},
              {"unlabeled", c.unlabeled},
              {"validation", c.validation},
              {"test", c.test}};
}

json to_json(const ErfConfig& c) {
  return json{{"seeds", c.seeds},
              {"input_size", c.input_size},
              {"threshold", c.threshold},
              {"max_plain_depth", c.max_plain_depth},
              {"prefix_depth", c.prefix_depth},
              {"channels", c.channels},
              {"mode", to_string(c.mode)}};
}

json to_json(const CalibrateConfig& c) {
  return json{{"bins", c.bins}, {"lo", c.lo}, {"hi", c.hi}};
}

json to_json(const AblateConfig& c) { return json{{"grid", c.grid}, {"seeds", c.seeds}}; }

json to_json(const RunConfig& c) {
  return json{{"network", to_json(c.network)},     {"train", to_json(c.train)},
              {"data", to_json(c.data)},           {"erf", to_json(c.erf)},
              {"calibrate", to_json(c.calibrate)}, {"ablate", to_json(c.ablate)}};
}

NetworkConfig network_config_from_json(const json& j) { return read_network(j, "network"); }
TrainConfig train_config_from_json(const json& j) { return read_train(j, "train"); }
DatasetSpec dataset_spec_from_json(const json& j) { return read_data(j, "data"); }
ErfConfig erf_config_from_json(const json& j) { return read_erf(j, "erf"); }
CalibrateConfig calibrate_config_from_json(const json& j) { return read_calibrate(j, "calibrate"); }
AblateConfig ablate_config_from_json(const json& j) { return read_ablate(j, "ablate"); }

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section s(j, "");
  if (const json* v = s.child("network")) c.network = read_network(*v, "network");
  if (const json* v = s.child("train")) c.train = read_train(*v, "train");
  if (const json* v = s.child("data")) c.data = read_data(*v, "data");
  if (const json* v = s.child("erf")) c.erf = read_erf(*v, "erf");
  if (const json* v = s.child("calibrate")) c.calibrate = read_calibrate(*v, "calibrate");
  if (const json* v = s.child("ablate")) c.ablate = read_ablate(*v, "ablate");
  s.finish();
  if (c.network.input_size != c.data.size) {
    throw ConfigError("network.input_size", "must equal data.size (" + std::to_string(c.data.size) + ")");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void write_resolved_config(const RunConfig& config, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_json(config).dump(2) << '\n';
}

std::string config_fingerprint(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mismatch
