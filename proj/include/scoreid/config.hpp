#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scoreid/dimred.hpp"
#include "scoreid/features.hpp"
#include "scoreid/weights.hpp"

namespace scoreid {

enum class FeatureKind { Lgh, Gabor };
enum class ModelKind { Hmm, Gmm };
enum class Mode { Line, BlockLine };

std::string_view to_string(FeatureKind kind);
std::string_view to_string(ModelKind kind);
std::string_view to_string(Mode mode);

/// Everything a run needs besides paths. Keys are the dashed names used both
/// in config files and as command-line flags.
struct RunConfig {
  SlidingWindowConfig window;
  FeatureKind feature_kind = FeatureKind::Lgh;
  bool silence = true;

  ModelKind model_kind = ModelKind::Hmm;
  int states = 4;
  int mixtures = 64;
  int iterations = 10;
  int stage_iterations = 5;

  TransformKind transform = TransformKind::None;
  int transform_dim = 128;
  int transform_iterations = 100;

  WeightFunction weight;

  Mode mode = Mode::Line;
  int strips = 8;
  int zone_states = 3;
  int zone_mixtures = 4;
  int zone_rounds = 2;

  double seg_threshold = 0.1;
  int seg_min_gap = 3;

  int folds = 10;
  std::uint64_t seed = 1;
  int jobs = 0;
  double noise_level = 0.0;

  /// Sets one key from its textual value; unknown keys and bad values are
  /// config errors.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  void validate() const;

  /// All keys with their current values in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  /// FNV-1a over the keys that change how frames are produced or what a
  /// scoring unit is; two runs with equal digests see the same frames.
  std::uint64_t digest() const;
};

/// Every recognised key, in the order used by entries().
const std::vector<std::string>& config_keys();

/// `key = value` or `key value` per line; `#` starts a comment.
void load_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Environment variable naming a default config file.
inline constexpr const char* kConfigEnvVar = "SCOREID_CONFIG";

}  // namespace scoreid
