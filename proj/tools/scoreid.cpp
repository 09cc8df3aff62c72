// scoreid: batch front end for synthesis, segmentation, feature extraction,
// writer-model training, identification and cross-validated evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scoreid/binary_io.hpp"
#include "scoreid/config.hpp"
#include "scoreid/error.hpp"
#include "scoreid/eval.hpp"
#include "scoreid/image_io.hpp"
#include "scoreid/parallel.hpp"
#include "scoreid/pipeline.hpp"
#include "scoreid/segmentation.hpp"
#include "scoreid/synth.hpp"

namespace fs = std::filesystem;
using namespace scoreid;

namespace {

struct Options {
  std::string config_file;
  std::map<std::string, std::string> overrides;  // only flags actually given
};

// Precedence: defaults < $SCOREID_CONFIG < --config < individual flags.
RunConfig resolve(const Options& opt, RunConfig cfg = {}) {
  if (const char* env = std::getenv(kConfigEnvVar); env && *env && opt.config_file.empty())
    load_config_file(cfg, env);
  if (!opt.config_file.empty()) load_config_file(cfg, opt.config_file);
  for (const auto& [k, v] : opt.overrides) cfg.set(k, v);
  cfg.validate();
  set_max_jobs(cfg.jobs);
  return cfg;
}

std::string provenance(const RunConfig& cfg) { return "config-digest " + hex64(cfg.digest()); }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  return out;
}

// Writes to the file when given, else to standard output.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  auto out = open_out(path);
  out << text;
}

std::optional<FillerGrammar> grammar_for(const RunConfig& cfg, const std::string& registry_dir) {
  if (cfg.mode != Mode::BlockLine) return std::nullopt;
  if (registry_dir.empty()) fail(ErrorKind::Argument, "block-line mode needs --registry for the zone grammar");
  Registry reg = load_registry(registry_dir);
  if (!reg.grammar) fail(ErrorKind::Format, "registry " + registry_dir + " has no zone grammar");
  return reg.grammar;
}

int cmd_synth(const RunConfig& cfg, const fs::path& out_dir, int writers, int pages, const SynthPageSpec& spec) {
  write_synthetic_corpus(out_dir, writers, pages, spec, cfg.seed, cfg.noise_level);
  return 0;
}

int cmd_segment(const RunConfig& cfg, const fs::path& page, const std::string& registry_dir, const std::string& out) {
  const auto grammar = grammar_for(cfg, registry_dir);
  const GrayImage img = load_page(page);
  std::vector<LineBox> boxes;
  std::ostringstream text;
  text << "# " << provenance(cfg) << '\n';
  if (cfg.mode == Mode::Line) {
    ProjectionParams pp;
    pp.threshold = cfg.seg_threshold;
    pp.min_gap = cfg.seg_min_gap;
    boxes = segment_lines_projection(img, pp);
  } else {
    const auto strips = split_strips(img, cfg.strips);
    for (std::size_t i = 0; i < strips.size(); ++i) {
      std::string diag;
      for (const auto& b : detect_block_lines(strips[i], static_cast<int>(i), *grammar, cfg.window, &diag))
        boxes.push_back(b);
      if (!diag.empty()) std::cerr << "scoreid: " << diag << '\n';
    }
  }
  write_segmentation(text, boxes);
  emit(out, text.str());
  return 0;
}

int cmd_extract(const RunConfig& cfg, const fs::path& page, const std::string& registry_dir, const fs::path& out_dir) {
  const auto grammar = grammar_for(cfg, registry_dir);
  const PageUnits units = extract_units(load_page(page), cfg, grammar ? &*grammar : nullptr);
  for (const auto& d : units.diagnostics) std::cerr << "scoreid: " << d << '\n';
  fs::create_directories(out_dir);
  std::ostringstream index;
  index << "# " << provenance(cfg) << '\n';
  for (std::size_t i = 0; i < units.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "unit-%03zu.feat", i);
    FeatureSequence seq;
    seq.frames = units.frames[i];
    seq.window_width = cfg.window.window_width;
    seq.config_digest = cfg.digest();
    save_features(seq, out_dir / name);
  }
  write_segmentation(index, units.boxes);
  emit((out_dir / "units.txt").string(), index.str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir) {
  const auto entries = read_manifest(manifest);
  require(!entries.empty(), ErrorKind::Data, "manifest " + manifest.string() + " lists no pages");
  const auto pages = load_pages(entries, cfg);
  save_registry(train_writer_models(pages, cfg), out_dir);
  return 0;
}

int cmd_identify(const Options& opt, const fs::path& page, const fs::path& registry_dir, const std::string& out) {
  Registry reg = load_registry(registry_dir);
  // Requested settings start from the registry's own; anything that changes
  // frames must agree with what the models were trained on.
  const RunConfig requested = resolve(opt, reg.config);
  if (requested.digest() != reg.digest())
    fail(ErrorKind::Config, "config digest " + hex64(requested.digest()) + " differs from registry digest " +
                                hex64(reg.digest()));
  reg.config = requested;
  const PageResult result = identify_page(load_page(page), reg, requested.weight);
  for (const auto& d : result.diagnostics) std::cerr << "scoreid: " << d << '\n';
  std::ostringstream text;
  text << "# " << provenance(reg.config) << '\n';
  write_identification(text, result, reg);
  emit(out, text.str());
  return 0;
}

// Each --grid entry is key=v1,v2,...; the grid is their cartesian product.
std::vector<RunConfig> expand_grid(const RunConfig& base, const std::vector<std::string>& axes) {
  std::vector<RunConfig> grid{base};
  for (const auto& axis : axes) {
    const auto eq = axis.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::Config, "--grid expects key=v1,v2,..., got '" + axis + "'");
    const std::string key = axis.substr(0, eq);
    std::vector<std::string> values;
    std::stringstream ss(axis.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');)
      if (!v.empty()) values.push_back(v);
    if (values.empty()) fail(ErrorKind::Config, "--grid axis '" + key + "' has no values");
    std::vector<RunConfig> next;
    for (const auto& g : grid)
      for (const auto& v : values) {
        RunConfig c = g;
        c.set(key, v);
        c.validate();
        next.push_back(c);
      }
    grid = std::move(next);
  }
  return grid;
}

int cmd_evaluate(const RunConfig& cfg, const fs::path& manifest, const fs::path& out_dir,
                 const std::vector<std::string>& axes) {
  const auto entries = read_manifest(manifest);
  const auto grid = expand_grid(cfg, axes);
  const EvalReport report = run_benchmark(entries, grid);
  for (const auto& f : report.failures) std::cerr << "scoreid: " << f << '\n';
  fs::create_directories(out_dir);
  emit((out_dir / "report.txt").string(), report.text());
  emit((out_dir / "timings.txt").string(), report.timings_text());
  if (report.folds.empty()) fail(ErrorKind::Identification, "no fold produced test results");
  std::printf("page-top1 %.6f unit-top1 %.6f\n", report.page_top1(), report.unit_top1());
  return 0;
}

int cmd_import(const fs::path& root, const fs::path& out) {
  write_manifest(out, import_muscima(root), "scoreid import-muscima " + root.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Writer identification for handwritten music scores"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config_file, "Configuration file (key = value per line)")
      ->check(CLI::ExistingFile);
  RunConfig defaults;
  for (const auto& key : config_keys())
    app.add_option_function<std::string>(
           "--" + key, [&opt, key](const std::string& v) { opt.overrides[key] = v; },
           "default: " + defaults.get(key))
        ->group("Configuration");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-writer score corpus");
  std::string synth_out;
  int writers = 5, pages = 10;
  SynthPageSpec spec;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--writers", writers, "Number of writers")->capture_default_str();
  synth->add_option("--pages", pages, "Pages per writer")->capture_default_str();
  synth->add_option("--lines", spec.lines_per_page, "Score lines per page")->capture_default_str();
  synth->add_option("--width", spec.width, "Page width in pixels")->capture_default_str();
  synth->add_option("--staff-gap", spec.staff_gap, "Staff line spacing in pixels")->capture_default_str();
  synth->add_option("--curvature", spec.curvature_amplitude, "Staff curvature amplitude in pixels")
      ->capture_default_str();
  synth->add_option("--curvature-period", spec.curvature_period, "Staff curvature period in pixels")
      ->capture_default_str();

  std::string page, registry_dir, out;
  auto* segment = app.add_subcommand("segment", "Print the score-line boxes of a page");
  segment->add_option("page", page, "Page image")->required()->check(CLI::ExistingFile);
  segment->add_option("--registry", registry_dir, "Registry holding the zone grammar (block-line mode)");
  segment->add_option("--out", out, "Output file (default: standard output)");

  auto* extract = app.add_subcommand("extract", "Write per-unit feature files for a page");
  extract->add_option("page", page, "Page image")->required()->check(CLI::ExistingFile);
  extract->add_option("--registry", registry_dir, "Registry holding the zone grammar (block-line mode)");
  extract->add_option("--out", out, "Output directory")->required();

  std::string manifest;
  auto* train = app.add_subcommand("train", "Train one model per writer from a manifest");
  train->add_option("manifest", manifest, "Manifest (writer, page id, path; tab-separated)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--out", out, "Registry directory")->required();

  auto* identify = app.add_subcommand("identify", "Rank the registered writers for a page");
  identify->add_option("page", page, "Page image")->required()->check(CLI::ExistingFile);
  identify->add_option("--registry", registry_dir, "Registry directory")->required()->check(CLI::ExistingDirectory);
  identify->add_option("--out", out, "Output file (default: standard output)");

  std::vector<std::string> axes;
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validated benchmark over a manifest");
  evaluate->add_option("manifest", manifest, "Manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", out, "Output directory for report.txt and timings.txt")->required();
  evaluate->add_option("--grid", axes, "Sweep axis key=v1,v2,... (repeatable)");

  std::string root;
  auto* import = app.add_subcommand("import-muscima", "Build a manifest from writer folders (w-01, w-02, ...)");
  import->add_option("root", root, "Dataset root")->required()->check(CLI::ExistingDirectory);
  import->add_option("--out", out, "Manifest file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return cmd_synth(resolve(opt), synth_out, writers, pages, spec);
    if (*segment) return cmd_segment(resolve(opt), page, registry_dir, out);
    if (*extract) return cmd_extract(resolve(opt), page, registry_dir, out);
    if (*train) return cmd_train(resolve(opt), manifest, out);
    if (*identify) return cmd_identify(opt, page, registry_dir, out);
    if (*evaluate) return cmd_evaluate(resolve(opt), manifest, out, axes);
    if (*import) return cmd_import(root, out);
  } catch (const Error& e) {
    std::cerr << "scoreid: " << to_string(e.kind()) << " error: " << e.what() << '\n';
    return static_cast<int>(e.kind()) + 2;
  } catch (const std::exception& e) {
    std::cerr << "scoreid: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
