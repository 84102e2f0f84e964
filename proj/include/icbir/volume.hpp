#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icbir/orientation.hpp"
#include "icbir/tensor.hpp"

namespace icbir {

// Dense 3-D scalar grid.  Voxels are row-major with axis 0 slowest; the
// pipeline's canonical grid is cubic (D0 == D1 == D2 == S).
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<float> voxels;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::string id;
  int label = 0;     // class index in [1, K]; 0 = unlabeled
  std::string kind;  // "" for image data; "probmap"/"mask" for derived grids

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  float& at(std::size_t a0, std::size_t a1, std::size_t a2) {
    return voxels[(a0 * dims[1] + a1) * dims[2] + a2];
  }
  float at(std::size_t a0, std::size_t a1, std::size_t a2) const {
    return voxels[(a0 * dims[1] + a1) * dims[2] + a2];
  }

  bool is_cubic() const { return dims[0] == dims[1] && dims[1] == dims[2]; }
};

// ---- Container I/O ---------------------------------------------------------
// File layout: magic "SVOL" | u32 LE header length | UTF-8 JSON header
// {"dims":[D0,D1,D2],"dtype":"f32","spacing":[...],"id":...,"label":...}
// (plus "kind" for derived grids) | D0*D1*D2 little-endian 32-bit floats.
// Round-trips are bit-exact on the voxel payload.
Volume read_volume(const std::string& path);
void write_volume(const Volume& volume, const std::string& path);

// ---- Canonical grid --------------------------------------------------------
// Trilinear resample (align-corners) onto an S^3 grid, then min-max
// normalization to [0,1]; a constant input maps to all zeros.
Volume resample_to_canonical(const Volume& volume, std::size_t s);

// ---- Orientation slicing ---------------------------------------------------
// Slices are 1-based: slice i fixes plane index i-1 on the orientation's
// axis.  In-plane layout is row-major over the two remaining axes in
// ascending axis order (axial -> (a1,a2), coronal -> (a0,a2), sagittal ->
// (a0,a1)).
std::size_t n_sections(const Volume& volume, Orientation orientation);
void extract_slice(const Volume& volume, Orientation orientation,
                   std::size_t slice_index, float* out);
std::vector<Tensor> extract_slices(const Volume& volume, Orientation orientation);

// ---- Synthetic phantoms ----------------------------------------------------
struct PhantomSpec {
  std::uint64_t seed = 0;
  int class_id = 1;           // 1 = normal, 2 = anomalous
  float noise_sigma = 0.0f;   // additive Gaussian noise, clipped to [0,1]
  float jitter = 0.0f;        // max |shift| of the structure center, voxels
  float anomaly_scale = 1.5f; // inner-structure radius ratio class2 : class1
  std::size_t grid = 64;      // cubic grid edge S
};

// Boolean grid marking where the two class templates differ (given the same
// jittered center) — the oracle region for localization checks.
struct GroundTruthMask {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> inside;

  std::size_t count() const;
  // Axis-aligned bounding box [lo, hi] inclusive; raises on an empty mask.
  void bounding_box(std::array<std::size_t, 3>& lo, std::array<std::size_t, 3>& hi) const;
};

struct Phantom {
  Volume volume;
  GroundTruthMask mask;
};

// Deterministic two-class phantom: dark background, bright outer shell
// (intensity 0.8, radius 0.42*S), dark inner structure (intensity 0.1,
// radius 0.08*S, enlarged by anomaly_scale for class 2), jittered center,
// optional additive noise.  Same spec -> bit-identical output.
Phantom generate_phantom(const PhantomSpec& spec);

// Mask <-> Volume bridges so masks travel in the same container (kind "mask").
Volume mask_to_volume(const GroundTruthMask& mask, const std::string& id);
GroundTruthMask mask_from_volume(const Volume& volume);

// ---- Dataset manifest ------------------------------------------------------
// JSON-lines, one record per volume: {"path", "id", "label", "split"} plus
// an optional "mask" path for phantoms with ground truth.
struct ManifestRecord {
  std::string path;
  std::string id;
  int label = 0;
  std::string split;      // "train" or "test"
  std::string mask_path;  // optional
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestRecord>& records, const std::string& path);

}  // namespace icbir
