#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "icbir/retrieval.hpp"

namespace icbir {

// Rows = true class, columns = predicted class; both 1-based at the API.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::size_t> counts;  // [K, K] row-major

  static ConfusionMatrix make(std::size_t n_classes);
  void accumulate(int true_class, int predicted_class);
  std::size_t at(std::size_t true_class, std::size_t predicted_class) const;
  std::size_t total() const;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsSummary {
  std::vector<ClassMetrics> per_class;  // index 0 holds class 1
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;  // trace / total
};

// precision = TP/(TP+FP), recall = TP/(TP+FN), F1 = 2PR/(P+R); every 0/0
// is defined as 0; macro values are unweighted class means.
MetricsSummary compute_metrics(const ConfusionMatrix& cm);

// One evaluated volume, with the label each channel assigned to it.
struct VolumeOutcome {
  std::string id;
  int true_label = 0;
  std::array<int, 3> orientation_pred{0, 0, 0};  // axial, coronal, sagittal
  int ensemble_pred = 0;
  int retrieval_pred = 0;
  std::string retrieval_top_id;
};

struct EvalBlock {
  ConfusionMatrix confusion;
  MetricsSummary metrics;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::array<EvalBlock, 3> per_orientation;  // indexed by Orientation
  EvalBlock ensemble;
  EvalBlock retrieval;
  bool leakage_warning = false;  // a test id also sits in the gallery
  std::vector<VolumeOutcome> volumes;  // sorted by id
};

// Label a single orientation's detection result: the detected class with the
// largest vote fraction (lowest index on ties), or the normal class when
// nothing was detected.
int section_label(const SectionDetection& section, const DetectionConfig& config);

// Runs detection (per orientation + ensemble) and top-1 gallery retrieval
// over every test volume.  Volumes are processed in parallel; matrices are
// merged in a fixed order, so reports do not depend on thread count or on
// the order of the test list.
EvalReport evaluate_run(const VaeModel& model, const PrototypeBank& bank,
                        const GalleryIndex& index,
                        const std::vector<Volume>& test_volumes,
                        const DetectionConfig& detection, BlockParams params,
                        float temperature = 1.0f, int threads = 1);

// Pretty-printed JSON with exactly four top-level blocks: "meta",
// "per_orientation", "ensemble", "retrieval".  extra_meta_json (an optional
// JSON object) is merged into "meta" for provenance.
std::string report_to_json(const EvalReport& report,
                           const std::string& extra_meta_json = "");
EvalReport report_from_json(const std::string& text);

// Tab-separated macro summary: rows coronal, sagittal, axial, ensemble,
// retrieval; columns section/precision/recall/f1.
std::string report_to_tsv(const EvalReport& report);

}  // namespace icbir
