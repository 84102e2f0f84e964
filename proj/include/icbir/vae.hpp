#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icbir/nn.hpp"
#include "icbir/orientation.hpp"
#include "icbir/protohead.hpp"
#include "icbir/tensor.hpp"
#include "icbir/volume.hpp"

namespace icbir {

// Loss-term weights and architecture sizes.  The loss is
//   total = recon + beta * KL + gamma * CE
// with mean-squared reconstruction error, the standard-normal KL term, and
// the prototype cross-entropy.
struct VaeConfig {
  std::size_t s = 64;   // slice edge; inputs are S*S pixels
  std::size_t h = 256;  // hidden width
  std::size_t l = 32;   // latent width
  // The KL term is a sum over latent dimensions while the reconstruction
  // error is a per-pixel mean, so even a modest beta lets the KL pull every
  // posterior to the prior before the decoder learns anything (all codes
  // collapse to zero and the classifier stays at chance).  The default keeps
  // the KL as a gentle regularizer only.
  float beta = 0.001f;
  float gamma = 1.0f;
};

// Per-slice autoencoder: one shared relu trunk, two linear heads for
// (mu, logvar), and a mirrored decoder with sigmoid output.
struct VaeModel {
  VaeConfig cfg;
  DenseLayer enc_hidden;   // S^2 -> H, relu
  DenseLayer mu_head;      // H -> L, identity
  DenseLayer logvar_head;  // H -> L, identity
  DenseLayer dec_hidden;   // L -> H, relu
  DenseLayer dec_out;      // H -> S^2, sigmoid

  // Random weights (He for relu trunks, Xavier otherwise), zero biases;
  // each tensor gets its own derived seed stream, so layouts are stable.
  static VaeModel init(const VaeConfig& cfg, std::uint64_t seed);

  // Fixed parameter order used by the optimizer and the checkpoint format.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  static std::vector<std::string> parameter_names();
};

// logvar is clamped to this range before any exp(); the clamp gradient is
// pass-through strictly inside the range and zero outside.
inline constexpr float kLogvarClampMin = -10.0f;
inline constexpr float kLogvarClampMax = 10.0f;

struct SliceSample {
  Tensor pixels;  // [S*S], values in [0,1]
  Orientation orientation = Orientation::Axial;
  std::size_t slice_index = 1;  // 1-based
  int class_label = 1;          // 1-based
};

struct LatentCode {
  Tensor mu;
  Tensor logvar;  // clamped values
  Tensor z;
};

enum class EncodeMode { Train, Inference };

// Training mode draws eps ~ N(0,1) from rng and sets z = mu + exp(logvar/2)*eps;
// inference mode sets z = mu.  eps_out (optional) records the draw.
LatentCode encode(const VaeModel& model, const Tensor& pixels, EncodeMode mode,
                  Rng* rng = nullptr, Tensor* eps_out = nullptr);

// Deterministic variant with a caller-supplied eps (testing / analysis).
LatentCode encode_with_eps(const VaeModel& model, const Tensor& pixels, const Tensor& eps);

// Batched inference encode: x[batch * S^2] -> mu, logvar (both [batch * L]).
void encode_batch(const VaeModel& model, const float* x, std::size_t batch, float* mu,
                  float* logvar);

Tensor decode(const VaeModel& model, const Tensor& z);

// Mean over elements of (x - xhat)^2.
float reconstruction_loss(const Tensor& x, const Tensor& xhat);

// 0.5 * sum_i (exp(logvar_i) + mu_i^2 - 1 - logvar_i); >= 0, 0 iff (0, 0).
float kl_divergence(const Tensor& mu, const Tensor& logvar);

struct LossBreakdown {
  float recon = 0.0f;
  float kl = 0.0f;
  float ce = 0.0f;
  float total = 0.0f;
};

// Full training-mode loss for one sample: encodes with a fresh eps draw from
// rng, decodes, scores against the bank, and combines the three terms.
LossBreakdown total_loss(const VaeModel& model, const PrototypeBank& bank,
                         const SliceSample& sample, Rng& rng, float temperature = 1.0f);

// Same computation with a fixed eps (reproducible gradients/tests).
LossBreakdown total_loss_with_eps(const VaeModel& model, const PrototypeBank& bank,
                                  const SliceSample& sample, const Tensor& eps,
                                  float temperature = 1.0f);

// Analytic gradient of the single-sample total loss with respect to every
// model parameter and the prototype bank — the same backward math the
// training loop uses, exposed so gradients can be checked in isolation.
struct LossGradients {
  LossBreakdown loss;
  std::vector<Tensor> params;  // parameter_names() order
  Tensor bank;                 // same shape as bank.protos
};

LossGradients loss_gradients(const VaeModel& model, const PrototypeBank& bank,
                             const SliceSample& sample, const Tensor& eps,
                             float temperature = 1.0f);

// ---- Slice dataset ---------------------------------------------------------

struct SliceRef {
  std::uint32_t volume = 0;
  std::uint8_t orientation = 0;
  std::uint16_t slice_index = 1;  // 1-based
  std::uint8_t label = 1;         // 1-based
};

// All slices of all volumes across the three orientations, materialized into
// one contiguous pixel matrix (row per slice) for cheap batch gathering.
// Order: volume-major, then orientation (axial, coronal, sagittal), then
// ascending slice index — fixed, so downstream accumulation is reproducible.
struct SliceDataset {
  std::size_t s = 0;
  std::size_t slice_pixels = 0;
  std::vector<SliceRef> refs;
  std::vector<float> pixels;

  const float* row(std::size_t i) const { return pixels.data() + i * slice_pixels; }

  // Volumes must be cubic with equal edge and labels in [1, 255].
  static SliceDataset from_volumes(const std::vector<Volume>& volumes);
};

// ---- Training --------------------------------------------------------------

struct EpochStats {
  double recon = 0.0;
  double kl = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 64;
  float lr = 1e-3f;
  std::uint64_t seed = 1;
  float temperature = 1.0f;  // cross-entropy softmax temperature
  // Called after each epoch with (1-based epoch, stats); may be empty.
  std::function<void(std::size_t, const EpochStats&)> progress;
};

// Joint gradient training of encoder, decoder, and prototypes with Adam.
//
// Determinism contract: given identical (model, bank, dataset, config) the
// result is bit-identical on any machine.  Shuffling, eps draws, batch
// composition (floor(n/batch) full batches per epoch, remainder unused), and
// every summation order are pure functions of the seed.  Returns per-epoch
// mean loss terms.
std::vector<EpochStats> train(VaeModel& model, PrototypeBank& bank,
                              const SliceDataset& dataset, const TrainConfig& cfg);

// Class-mean prototype initialization: each (orientation, slice, class) cell
// becomes the arithmetic mean of the encoder means mu over that cell's
// training slices.  Raises an input error listing any empty cells.
PrototypeBank init_prototypes(const VaeModel& model, const SliceDataset& dataset,
                              std::vector<std::string> class_names);

}  // namespace icbir
