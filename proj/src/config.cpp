#include "scoreid/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

#include "scoreid/binary_io.hpp"
#include "scoreid/error.hpp"

namespace scoreid {
namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  fail(ErrorKind::Config, "invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto r = std::from_chars(value.data(), value.data() + value.size(), out);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size()) bad_value(key, value);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v);
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
  bool digest = false;
};

template <class T>
Field int_field(T RunConfig::*member, bool digest = false) {
  return {[member](RunConfig& c, std::string_view v) { c.*member = parse_number<T>("", v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }, digest};
}

// Ordered table; the order is the one entries() and the digest use.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto window_int = [](int SlidingWindowConfig::*m) {
      return Field{[m](RunConfig& c, std::string_view v) { c.window.*m = parse_number<int>("", v); },
                   [m](const RunConfig& c) { return std::to_string(c.window.*m); }, true};
    };
    t.emplace_back("window-width", window_int(&SlidingWindowConfig::window_width));
    t.emplace_back("overlap", Field{[](RunConfig& c, std::string_view v) { c.window.overlap = parse_number<double>("", v); },
                                    [](const RunConfig& c) { return fmt(c.window.overlap); }, true});
    t.emplace_back("grid-rows", window_int(&SlidingWindowConfig::grid_rows));
    t.emplace_back("grid-cols", window_int(&SlidingWindowConfig::grid_cols));
    t.emplace_back("orientation-bins", window_int(&SlidingWindowConfig::orientation_bins));
    t.emplace_back("feature-kind",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "lgh") c.feature_kind = FeatureKind::Lgh;
                           else if (v == "gabor") c.feature_kind = FeatureKind::Gabor;
                           else bad_value("feature-kind", v);
                         },
                         [](const RunConfig& c) { return std::string(to_string(c.feature_kind)); }, true});
    t.emplace_back("silence", Field{[](RunConfig& c, std::string_view v) { c.silence = parse_bool("silence", v); },
                                    [](const RunConfig& c) { return std::string(c.silence ? "on" : "off"); }, true});
    t.emplace_back("model-kind",
                   Field{[](RunConfig& c, std::string_view v) {
                           if (v == "hmm") c.model_kind = ModelKind::Hmm;
                           else if (v == "gmm") c.model_kind = ModelKind::Gmm;
                           else bad_value("model-kind", v);
                         },
                         [](const RunConfig& c) { return std::string(to_string(c.model_kind)); }});
    t.emplace_back("states", int_field(&RunConfig::states));
    t.emplace_back("mixtures", int_field(&RunConfig::mixtures));
    t.emplace_back("iterations", int_field(&RunConfig::iterations));
    t.emplace_back("stage-iterations", int_field(&RunConfig::stage_iterations));
    t.emplace_back("transform",
                   Field{[](RunConfig& c, std::string_view v) { c.transform = parse_transform_kind(v); },
                         [](const RunConfig& c) { return std::string(to_string(c.transform)); }, true});
    t.emplace_back("transform-dim", int_field(&RunConfig::transform_dim, true));
    t.emplace_back("transform-iterations", int_field(&RunConfig::transform_iterations));
    t.emplace_back("weight",
                   Field{[](RunConfig& c, std::string_view v) { c.weight.kind = parse_weight_kind(v); },
                         [](const RunConfig& c) { return std::string(to_string(c.weight.kind)); }});
    t.emplace_back("uniform-k", Field{[](RunConfig& c, std::string_view v) { c.weight.uniform_k = parse_number<double>("", v); },
                                      [](const RunConfig& c) { return fmt(c.weight.uniform_k); }});
    t.emplace_back("decay", Field{[](RunConfig& c, std::string_view v) { c.weight.decay = parse_number<double>("", v); },
                                  [](const RunConfig& c) { return fmt(c.weight.decay); }});
    t.emplace_back("mode", Field{[](RunConfig& c, std::string_view v) {
                                   if (v == "line") c.mode = Mode::Line;
                                   else if (v == "block-line") c.mode = Mode::BlockLine;
                                   else bad_value("mode", v);
                                 },
                                 [](const RunConfig& c) { return std::string(to_string(c.mode)); }, true});
    t.emplace_back("strips", int_field(&RunConfig::strips, true));
    t.emplace_back("zone-states", int_field(&RunConfig::zone_states, true));
    t.emplace_back("zone-mixtures", int_field(&RunConfig::zone_mixtures));
    t.emplace_back("zone-rounds", int_field(&RunConfig::zone_rounds));
    t.emplace_back("seg-threshold",
                   Field{[](RunConfig& c, std::string_view v) { c.seg_threshold = parse_number<double>("", v); },
                         [](const RunConfig& c) { return fmt(c.seg_threshold); }, true});
    t.emplace_back("seg-min-gap", int_field(&RunConfig::seg_min_gap, true));
    t.emplace_back("folds", int_field(&RunConfig::folds));
    t.emplace_back("seed", int_field(&RunConfig::seed));
    t.emplace_back("jobs", int_field(&RunConfig::jobs));
    t.emplace_back("noise-level",
                   Field{[](RunConfig& c, std::string_view v) { c.noise_level = parse_number<double>("", v); },
                         [](const RunConfig& c) { return fmt(c.noise_level); }});
    return t;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  fail(ErrorKind::Config, "unknown configuration key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string_view to_string(FeatureKind kind) { return kind == FeatureKind::Gabor ? "gabor" : "lgh"; }
std::string_view to_string(ModelKind kind) { return kind == ModelKind::Gmm ? "gmm" : "hmm"; }
std::string_view to_string(Mode mode) { return mode == Mode::BlockLine ? "block-line" : "line"; }

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const Field& f = field(key);
  try {
    f.set(*this, trim(value));
  } catch (const Error&) {
    bad_value(key, trim(value));
  }
}

std::string RunConfig::get(std::string_view key) const { return field(key).get(*this); }

void RunConfig::validate() const {
  try {
    window.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorKind::Config, msg);
  };
  check(states >= 1, "states must be positive");
  check(mixtures >= 1, "mixtures must be positive");
  check(iterations >= 0 && stage_iterations >= 0, "iteration counts must be non-negative");
  check(transform_dim >= 1, "transform-dim must be positive");
  check(transform_iterations >= 0, "transform-iterations must be non-negative");
  check(strips >= 1 && strips <= 16, "strips must lie in [1, 16]");
  check(zone_states >= 1 && zone_mixtures >= 1 && zone_rounds >= 0, "zone model sizes must be positive");
  check(seg_threshold > 0 && seg_threshold < 1, "seg-threshold must lie in (0, 1)");
  check(seg_min_gap >= 0, "seg-min-gap must be non-negative");
  check(folds >= 1, "folds must be at least 1");
  check(jobs >= 0, "jobs must be non-negative");
  check(noise_level >= 0 && noise_level <= 1, "noise-level must lie in [0, 1]");
  check(weight.uniform_k > 0, "uniform-k must be positive");
  check(weight.decay > 0, "decay must be positive");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, f] : fields()) out.emplace_back(name, f.get(*this));
  return out;
}

std::uint64_t RunConfig::digest() const {
  std::string canon;
  for (const auto& [name, f] : fields())
    if (f.digest) canon += name + "=" + f.get(*this) + ";";
  return fnv1a(canon);
}

void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read config " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    auto sep = s.find('=');
    if (sep == std::string_view::npos) sep = s.find_first_of(" \t");
    if (sep == std::string_view::npos)
      fail(ErrorKind::Config, path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    cfg.set(trim(s.substr(0, sep)), trim(s.substr(sep + 1)));
  }
}

}  // namespace scoreid
