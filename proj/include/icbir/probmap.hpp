#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "icbir/protohead.hpp"
#include "icbir/retrieval.hpp"
#include "icbir/vae.hpp"
#include "icbir/volume.hpp"

namespace icbir {

// Per-class voxel probability volume, [K, S, S, S] row-major.  At every
// voxel the K values form a probability simplex (sum 1 within 1e-5).
struct ProbabilityMap {
  std::size_t n_classes = 0;
  std::size_t s = 0;
  std::vector<float> data;
  std::string volume_id;
  float highlight_threshold = 0.8f;

  float at(std::size_t cls /*1-based*/, std::size_t a, std::size_t b,
           std::size_t c) const {
    return data[(((cls - 1) * s + a) * s + b) * s + c];
  }
};

enum class AggregateMode { Mean, Geometric };

// One orientation's contribution: slice i's probability vector p_i (from the
// per-slice scoring path) broadcast to every voxel of that slice's plane.
// Returns a [K, S, S, S] field.
std::vector<float> slice_probability_field(const PrototypeBank& bank,
                                           const VolumeCodes& codes,
                                           Orientation orientation,
                                           float temperature = 1.0f);

// Voxelwise combination of the three orientation fields.  Mean keeps the
// simplex automatically; the geometric mode renormalizes per voxel.
ProbabilityMap aggregate_probability_map(const std::vector<float>& axial,
                                         const std::vector<float>& coronal,
                                         const std::vector<float>& sagittal,
                                         std::size_t n_classes, std::size_t s,
                                         AggregateMode mode = AggregateMode::Mean);

// Convenience: codes -> three fields -> aggregated map.
ProbabilityMap probability_map_for(const VaeModel& model, const PrototypeBank& bank,
                                   const Volume& volume, float temperature = 1.0f,
                                   AggregateMode mode = AggregateMode::Mean);

struct OverlayStats {
  std::size_t highlighted = 0;
  std::optional<std::array<double, 3>> centroid;  // empty when nothing highlighted
  std::vector<std::string> image_paths;
  std::string sidecar_path;
};

// Writes one grayscale pixmap (P6) per slice along `render` with voxels
// where map[cls] >= threshold tinted red, plus a JSON sidecar with the
// volume id, class, threshold, highlight count, and centroid.
// provenance_json (optional) is embedded verbatim in the sidecar.
OverlayStats export_overlay(const ProbabilityMap& map, const Volume& volume,
                            int cls, float threshold, const std::string& out_dir,
                            Orientation render = Orientation::Axial,
                            const std::string& provenance_json = "");

// Highlight statistics without any file output (shared with export_overlay).
OverlayStats overlay_stats(const ProbabilityMap& map, int cls, float threshold);

// Per-class map volumes in the standard container (kind "probmap").
std::vector<Volume> map_to_volumes(const ProbabilityMap& map);

}  // namespace icbir
