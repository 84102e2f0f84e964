#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "icbir/checkpoint.hpp"
#include "icbir/metrics.hpp"
#include "icbir/probmap.hpp"
#include "icbir/retrieval.hpp"
#include "icbir/runconfig.hpp"

namespace icbir {

// Command implementations behind the CLI verbs.  Each one takes a plain
// argument struct, logs human-readable progress to the given stream, raises
// icbir::Error on any failure, and returns its results so tests can drive
// the exact code path the executable runs.

// ---- gen-synthetic ----------------------------------------------------------

struct GenSyntheticArgs {
  std::string out_dir;
  std::size_t train_per_class = 4;
  std::size_t test_per_class = 0;
  std::size_t classes = 2;  // the phantom family defines exactly two
  std::size_t grid = 64;
  float noise_sigma = 0.05f;
  float jitter = 2.0f;
  float anomaly_scale = 1.5f;
  std::uint64_t seed = 1;
  bool force = false;  // allow writing into a non-empty directory
};

struct GenSyntheticResult {
  std::string manifest_path;
  std::vector<ManifestRecord> records;
};

// Writes train + test phantoms per class (volumes at the top level, ground
// truth under masks/) plus a JSON-lines manifest.  Every phantom gets its own
// seed derived from the master seed and its ordinal, so the whole directory
// is a pure function of the arguments.
GenSyntheticResult cmd_gen_synthetic(const GenSyntheticArgs& args, std::ostream& log);

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string manifest_path;
  std::string checkpoint_path;
  RunConfig config;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string fingerprint;
  std::vector<EpochStats> curve;
};

// Loads the manifest's train split, initializes model + class-mean
// prototypes, runs joint training for config.epochs (0 = write the
// initialized state as-is), and writes the checkpoint.
TrainResult cmd_train(const TrainArgs& args, std::ostream& log);

// ---- shared inference knobs ---------------------------------------------------

// Optional overrides for inference-time settings; unset fields fall back to
// the values stored in the checkpoint's run config, so artifacts built
// together stay consistent by default.
struct InferenceKnobs {
  std::vector<float> xi;   // empty = checkpoint value
  int r = 0;               // 0 = checkpoint value
  std::size_t block_n = 0; // 0 = checkpoint value
  std::size_t block_m = 0; // 0 = checkpoint value
  float temperature = 0.0f;  // <= 0 = checkpoint value

  BlockParams resolve_blocks(const RunConfig& base) const;
  DetectionConfig resolve_detection(const RunConfig& base) const;
  float resolve_temperature(const RunConfig& base) const;
};

// ---- index --------------------------------------------------------------------

struct IndexArgs {
  std::string checkpoint_path;
  std::string manifest_path;
  std::string index_path;
  std::string split = "train";
  std::size_t block_n = 0;  // 0 = checkpoint value
  std::size_t block_m = 0;
  int threads = 0;
};

struct IndexResult {
  std::string index_path;
  std::size_t entries = 0;
  std::string fingerprint;
};

// Encodes a manifest split into a block-code gallery index stamped with the
// checkpoint fingerprint and run config.
IndexResult cmd_index(const IndexArgs& args, std::ostream& log);

// ---- query --------------------------------------------------------------------

struct QueryArgs {
  std::string checkpoint_path;
  std::string index_path;
  std::string volume_path;
  std::size_t k = 5;
  int threads = 0;
};

struct QueryCmdResult {
  QueryResult result;
};

// Prints the k nearest gallery entries of one query volume.
QueryCmdResult cmd_query(const QueryArgs& args, std::ostream& log);

// ---- detect -------------------------------------------------------------------

struct DetectArgs {
  std::string checkpoint_path;
  std::string volume_path;
  InferenceKnobs knobs;
};

struct DetectResult {
  std::array<SectionDetection, 3> sections;  // indexed by Orientation
  std::array<int, 3> section_labels{0, 0, 0};
  int label = 0;  // final volume label
};

// Runs block-vote detection and prints the per-orientation vote fractions
// (the rationale) plus the final label.
DetectResult cmd_detect(const DetectArgs& args, std::ostream& log);

// ---- probmap ------------------------------------------------------------------

struct ProbmapArgs {
  std::string checkpoint_path;
  std::string volume_path;
  std::string out_dir;
  int target_class = 0;       // 0 = every non-normal class
  float threshold = -1.0f;    // < 0 = checkpoint highlight value
  InferenceKnobs knobs;       // only temperature is used here
  AggregateMode mode = AggregateMode::Mean;
  Orientation render = Orientation::Axial;
};

struct ProbmapResult {
  ProbabilityMap map;
  std::vector<std::string> map_paths;  // one volume per class
  std::vector<OverlayStats> overlays;
};

// Writes per-class probability volumes plus highlight overlays + sidecar.
ProbmapResult cmd_probmap(const ProbmapArgs& args, std::ostream& log);

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint_path;
  std::string index_path;
  std::string manifest_path;
  std::string report_path;
  std::string tsv_path;  // "" = no TSV
  std::string split = "test";
  InferenceKnobs knobs;
  int threads = 0;
};

struct EvalResult {
  EvalReport report;
  std::string report_path;
};

// Evaluates detection (per orientation + ensemble) and top-1 retrieval over
// a manifest split and writes the JSON report (plus optional TSV summary).
EvalResult cmd_eval(const EvalArgs& args, std::ostream& log);

// ---- shared helpers -------------------------------------------------------------

// Loads every record of one split, resolves relative paths against the
// manifest's directory, resamples onto the canonical S grid, and applies the
// manifest's id/label.  Raises an input error when the split is empty.
std::vector<Volume> load_split(const std::string& manifest_path,
                               const std::string& split, std::size_t s);

// Resolves one manifest-relative path.
std::string manifest_relative(const std::string& manifest_path,
                              const std::string& record_path);

}  // namespace icbir
