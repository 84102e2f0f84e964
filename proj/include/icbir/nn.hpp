#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "icbir/rng.hpp"
#include "icbir/tensor.hpp"

namespace icbir {

enum class Activation { Identity, Relu, Sigmoid };

// Fully connected layer y = act(W x + b), weight stored row-major [out, in].
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::Identity;
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static DenseLayer make(std::size_t in, std::size_t out, Activation activation);
};

// Forward-pass state needed by the matching backward pass: a copy of the
// input batch and the pre-activation values.
struct DenseCache {
  std::size_t batch = 0;
  std::vector<float> input;  // [batch * in]
  std::vector<float> pre;    // [batch * out]
  bool valid = false;
};

// Batched forward over a row-major batch x[batch * in] -> y[batch * out].
// When cache is non-null it is (re)filled for a later backward call.
void dense_forward(const DenseLayer& layer, const float* x, std::size_t batch,
                   float* y, DenseCache* cache = nullptr);

// Convenience single-tensor form.  A 1-D input is treated as batch 1; a 2-D
// input as [batch, in].
Tensor dense_forward(const DenseLayer& layer, const Tensor& x, DenseCache* cache = nullptr);

// Batched backward.  grad_out is d(loss)/d(y) [batch * out]; produces
// d(loss)/d(W), d(loss)/d(b), and (if grad_x != nullptr) d(loss)/d(x).
// Requires a cache filled by a matching forward call, otherwise raises a
// state error.  The relu subgradient at exactly 0 is taken as 0.
void dense_backward(const DenseLayer& layer, const DenseCache& cache,
                    const float* grad_out, float* grad_x, Tensor& grad_w,
                    Tensor& grad_b);

struct DenseGradients {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};

DenseGradients dense_backward(const DenseLayer& layer, const DenseCache& cache,
                              const Tensor& grad_out);

// Adam optimizer state for one parameter tensor (beta1 0.9, beta2 0.999,
// eps 1e-8, bias-corrected).
struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
  float lr = 1e-3f;

  static AdamState for_param(const Tensor& param, float lr);
};

// One Adam update in place.  A zero gradient applied to a fresh state leaves
// the parameters unchanged (the step counter still advances).
void adam_step(AdamState& state, Tensor& param, const Tensor& grad);

// He-normal initialization for relu trunks, Xavier-uniform otherwise; biases
// are always zero.  Weight draws come from the given generator in row-major
// order so initialization is reproducible.
void init_dense(DenseLayer& layer, Rng& rng);

// Standard normal fill used for reparameterization draws; identical seeds
// give bit-identical output on any platform.
void sample_standard_normal(Rng& rng, std::span<float> out);

namespace gemm {
// Thin wrappers over the BLAS sgemm kernels, pinned to a single BLAS thread
// so results never depend on core count.  Shapes follow the dense layer
// convention: x[B, In], w[Out, In], y/g[B, Out].
void forward(const float* x, const float* w, float* y, std::size_t batch,
             std::size_t in, std::size_t out);
void grad_input(const float* g, const float* w, float* gx, std::size_t batch,
                std::size_t in, std::size_t out);
void grad_weight(const float* g, const float* x, float* gw, std::size_t batch,
                 std::size_t in, std::size_t out);
}  // namespace gemm

}  // namespace icbir
