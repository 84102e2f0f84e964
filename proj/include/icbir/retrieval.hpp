#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "icbir/protohead.hpp"
#include "icbir/vae.hpp"
#include "icbir/volume.hpp"

namespace icbir {

// 2.5D block geometry: blocks of n consecutive slices, stride m.  Block j
// (1-based) covers slice indices (j-1)m+1 ... (j-1)m+n; only full blocks
// exist, so J = floor((N - n)/m) + 1 and trailing slices may go unused.
struct BlockParams {
  std::size_t n = 8;
  std::size_t m = 4;

  void validate(std::size_t n_section) const;
  std::size_t block_count(std::size_t n_section) const;
  // 1-based inclusive slice range of block j.
  std::pair<std::size_t, std::size_t> slice_range(std::size_t j) const;
};

// J block codes, each the concatenation of n latent codes (dim = n * L).
struct BlockCodes {
  std::size_t j_count = 0;
  std::size_t dim = 0;
  std::vector<float> data;  // [J, dim] row-major

  const float* block(std::size_t j) const { return data.data() + (j - 1) * dim; }
};

// Per-slice latent codes of one volume, one matrix per orientation
// ([n_section, latent] row-major, slice 1 first).
struct VolumeCodes {
  std::size_t n_section = 0;
  std::size_t latent = 0;
  std::array<std::vector<float>, 3> z;

  const float* slice(Orientation orientation, std::size_t slice_index) const {
    return z[static_cast<std::size_t>(axis_of(orientation))].data() +
           (slice_index - 1) * latent;
  }
};

// Inference-encodes every slice of a canonical volume (z = mu).
VolumeCodes encode_volume_codes(const VaeModel& model, const Volume& volume);

// Concatenates consecutive slice codes into block codes.
BlockCodes build_blocks(const float* codes, std::size_t n_slices, std::size_t latent,
                        BlockParams params);
BlockCodes build_blocks(const std::vector<Tensor>& codes, BlockParams params);

// Concatenated per-class prototypes matching block j: [K, n*L] row-major.
std::vector<float> block_prototypes(const PrototypeBank& bank, Orientation orientation,
                                    std::size_t block_j, BlockParams params);

// Cosine + softmax + argmax over whole concatenated vectors.  With n = 1
// this runs the identical code path as score_slice.
ClassScores classify_block(const float* block, std::size_t dim,
                           const float* prototypes, std::size_t n_classes,
                           float temperature = 1.0f);

// Predicted class of every block of one orientation.
std::vector<int> block_predictions(const PrototypeBank& bank, const VolumeCodes& codes,
                                   Orientation orientation, BlockParams params,
                                   float temperature = 1.0f);

// ---- Detection -------------------------------------------------------------

struct DetectionConfig {
  std::vector<float> xi{0.5f};  // one shared value, or one per class
  int r = 1;                    // orientations required, in {1,2,3}
  int normal_class = 1;         // the default/background class, never "detected"

  float xi_for(int class_index, std::size_t n_classes) const;
  void validate(std::size_t n_classes) const;
};

struct SectionDetection {
  std::size_t blocks = 0;
  std::vector<std::size_t> votes;  // [K] block votes per class
  std::vector<double> fractions;   // votes / J
  std::vector<int> detected;       // ascending class indices, never normal
};

// Class d is detected iff votes_d / J > xi_d (strict).
SectionDetection detect_section(const std::vector<int>& predictions,
                                std::size_t n_classes, const DetectionConfig& config);

// Volume label: any class detected in >= r orientations; among several
// qualifiers the one with the largest summed vote fraction (lowest index on
// ties); otherwise the normal class.
int detect_volume(const std::array<SectionDetection, 3>& sections,
                  const DetectionConfig& config, std::size_t n_classes);

// ---- Gallery ---------------------------------------------------------------

struct GalleryEntry {
  std::string id;
  int label = 0;
  std::array<BlockCodes, 3> codes;  // per orientation
};

struct GalleryIndex {
  BlockParams params;
  std::size_t latent = 0;
  std::size_t n_section = 0;
  std::string checkpoint_fingerprint;  // hex
  std::string run_config_json;         // provenance blob embedded on write
  std::vector<GalleryEntry> entries;
};

// Encodes and blocks every volume (parallel over volumes; results
// independent of the worker count).
GalleryIndex index_gallery(const VaeModel& model, const std::vector<Volume>& volumes,
                           BlockParams params, const std::string& checkpoint_fingerprint,
                           int threads = 1);

struct RankedMatch {
  std::string id;
  int label = 0;
  double score = 0.0;
};

struct QueryResult {
  std::vector<RankedMatch> matches;  // descending score, ties by id ascending
  bool truncated = false;            // k exceeded the gallery size
};

// similarity(query, entry) = mean over (orientation, j) of
// cosine(block_q, block_e).  Deterministic for any thread count.
QueryResult query(const GalleryIndex& index, const VolumeCodes& codes, std::size_t k,
                  int threads = 1);

double pair_similarity(const GalleryIndex& index, const VolumeCodes& a,
                       const VolumeCodes& b);

// ---- Index file ------------------------------------------------------------
// Layout: magic "ICBX" | u32 version | u32 JSON length | JSON metadata
// (block params, fingerprint, entry table with byte offsets) | raw
// little-endian f32 code payload.  Round-trips bit-exactly.
void write_index(const GalleryIndex& index, const std::string& path);
GalleryIndex read_index(const std::string& path);

}  // namespace icbir
