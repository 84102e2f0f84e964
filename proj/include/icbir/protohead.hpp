#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "icbir/orientation.hpp"
#include "icbir/tensor.hpp"

namespace icbir {

// Trainable prototype vectors, one per (orientation, slice position, class).
// Every prototype direction is meaningful, so norms are kept above kNormFloor
// at all times (re-floored after each optimizer step).
struct PrototypeBank {
  std::size_t n_section = 0;
  std::size_t n_classes = 0;
  std::size_t latent = 0;
  std::vector<std::string> class_names;
  Tensor protos;  // [3, n_section, K, L] row-major

  static PrototypeBank make(std::size_t n_section, std::size_t n_classes,
                            std::size_t latent, std::vector<std::string> class_names);

  std::size_t cell_offset(Orientation orientation, std::size_t slice_index,
                          std::size_t class_index) const;  // both indices 1-based
  float* at(Orientation orientation, std::size_t slice_index, std::size_t class_index);
  const float* at(Orientation orientation, std::size_t slice_index,
                  std::size_t class_index) const;
};

inline constexpr float kNormFloor = 1e-6f;

// Classification result for one latent code (or block code) against the K
// class prototypes at its position.
struct ClassScores {
  Tensor s;        // [K] cosine similarities in [-1, 1]
  Tensor p;        // [K] softmax probabilities, sum 1
  int s_star = 0;  // predicted class, 1-based; ties break to the lowest index
};

// cos(a, b) = dot / (|a|·|b|).  Raises a degenerate-vector error when either
// norm is below kNormFloor.
float cosine_similarity(const Tensor& a, const Tensor& b);

// Numerically stable softmax of logits/temperature.  Temperature must be
// positive; the default 1.0 reproduces plain softmax.
Tensor softmax(const Tensor& logits, float temperature = 1.0f);

// Shared scoring core: cosine of z (length dim) against K contiguous
// prototype rows of the same length, then softmax(s/T) and argmax.  Both the
// per-slice path and the block path funnel through this exact function, so a
// 1-slice block scores bit-identically to score_slice.
ClassScores score_vectors(const float* z, std::size_t dim, const float* protos,
                          std::size_t n_classes, float temperature);

ClassScores score_slice(const PrototypeBank& bank, const Tensor& z,
                        Orientation orientation, std::size_t slice_index,
                        float temperature = 1.0f);

// -sum_k t_k ln(max(p_k, 1e-12)).  t must be one-hot.
float cross_entropy(const Tensor& p, const Tensor& t);

// Analytic gradients of the cross-entropy through softmax, cosine, and both
// normalizations.
struct CrossEntropyGrads {
  float loss = 0.0f;
  Tensor grad_z;       // [dim]
  Tensor grad_protos;  // [K, dim]
};

CrossEntropyGrads cross_entropy_gradients(const float* z, std::size_t dim,
                                          const float* protos, std::size_t n_classes,
                                          int true_class, float temperature);

// Gradients for one bank cell.  t is a one-hot target over the K classes.
CrossEntropyGrads prototype_gradients(const PrototypeBank& bank, const Tensor& z,
                                      Orientation orientation, std::size_t slice_index,
                                      const Tensor& t, float temperature = 1.0f);

// Accumulating form used by the training loop: adds scale * gradients into
// caller-owned buffers and returns the sample's cross-entropy.
float accumulate_cross_entropy_gradients(const float* z, std::size_t dim,
                                         const float* protos, std::size_t n_classes,
                                         int true_class, float temperature, float scale,
                                         float* grad_z, float* grad_protos);

// Rescales any prototype whose norm fell below kNormFloor back onto the
// floor (a fully zero prototype becomes the first basis vector scaled to the
// floor, deterministically).
void floor_prototype_norms(PrototypeBank& bank);

// One-hot helper: class indices are 1-based.
Tensor one_hot(std::size_t n_classes, int class_index);

}  // namespace icbir
