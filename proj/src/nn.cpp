#include "icbir/nn.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <mutex>

#include "icbir/error.hpp"

extern "C" void openblas_set_num_threads(int);

namespace icbir {
namespace {

void pin_blas_single_thread() {
  static std::once_flag flag;
  // BLAS multithreading would make results a function of core count; one
  // BLAS thread keeps every kernel bit-deterministic.  Coarse-grained
  // parallelism lives in parallel_for instead.
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

inline float apply_activation(Activation act, float pre) {
  switch (act) {
    case Activation::Identity: return pre;
    case Activation::Relu: return pre > 0.0f ? pre : 0.0f;
    case Activation::Sigmoid: return 1.0f / (1.0f + std::exp(-pre));
  }
  return pre;
}

inline float activation_grad(Activation act, float pre, float grad_out) {
  switch (act) {
    case Activation::Identity: return grad_out;
    case Activation::Relu: return pre > 0.0f ? grad_out : 0.0f;
    case Activation::Sigmoid: {
      const float s = 1.0f / (1.0f + std::exp(-pre));
      return grad_out * s * (1.0f - s);
    }
  }
  return grad_out;
}

}  // namespace

namespace gemm {

void forward(const float* x, const float* w, float* y, std::size_t batch,
             std::size_t in, std::size_t out) {
  pin_blas_single_thread();
  // y[B, Out] = x[B, In] * w[Out, In]^T
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(batch),
              static_cast<int>(out), static_cast<int>(in), 1.0f, x,
              static_cast<int>(in), w, static_cast<int>(in), 0.0f, y,
              static_cast<int>(out));
}

void grad_input(const float* g, const float* w, float* gx, std::size_t batch,
                std::size_t in, std::size_t out) {
  pin_blas_single_thread();
  // gx[B, In] = g[B, Out] * w[Out, In]
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(batch),
              static_cast<int>(in), static_cast<int>(out), 1.0f, g,
              static_cast<int>(out), w, static_cast<int>(in), 0.0f, gx,
              static_cast<int>(in));
}

void grad_weight(const float* g, const float* x, float* gw, std::size_t batch,
                 std::size_t in, std::size_t out) {
  pin_blas_single_thread();
  // gw[Out, In] = g[B, Out]^T * x[B, In]
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(out),
              static_cast<int>(in), static_cast<int>(batch), 1.0f, g,
              static_cast<int>(out), x, static_cast<int>(in), 0.0f, gw,
              static_cast<int>(in));
}

}  // namespace gemm

DenseLayer DenseLayer::make(std::size_t in, std::size_t out, Activation activation) {
  if (in == 0 || out == 0) {
    raise(ErrorCode::Dimension, "dense layer: in/out sizes must be positive");
  }
  DenseLayer layer;
  layer.in = in;
  layer.out = out;
  layer.activation = activation;
  layer.weight = Tensor::zeros({out, in});
  layer.bias = Tensor::zeros({out});
  return layer;
}

void dense_forward(const DenseLayer& layer, const float* x, std::size_t batch,
                   float* y, DenseCache* cache) {
  if (batch == 0) raise(ErrorCode::Dimension, "dense_forward: empty batch");
  gemm::forward(x, layer.weight.data(), y, batch, layer.in, layer.out);
  const float* bias = layer.bias.data();
  if (cache) {
    cache->batch = batch;
    cache->input.assign(x, x + batch * layer.in);
    cache->pre.resize(batch * layer.out);
  }
  for (std::size_t b = 0; b < batch; ++b) {
    float* row = y + b * layer.out;
    for (std::size_t o = 0; o < layer.out; ++o) {
      const float pre = row[o] + bias[o];
      if (cache) cache->pre[b * layer.out + o] = pre;
      row[o] = apply_activation(layer.activation, pre);
    }
  }
  if (cache) cache->valid = true;
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& x, DenseCache* cache) {
  std::size_t batch = 1;
  if (x.shape.size() == 2) {
    batch = x.shape[0];
    if (x.shape[1] != layer.in) {
      raise(ErrorCode::Dimension, "dense_forward: input width " +
                                      std::to_string(x.shape[1]) + " != layer in " +
                                      std::to_string(layer.in));
    }
  } else if (x.shape.size() == 1) {
    if (x.shape[0] != layer.in) {
      raise(ErrorCode::Dimension, "dense_forward: input size " +
                                      std::to_string(x.shape[0]) + " != layer in " +
                                      std::to_string(layer.in));
    }
  } else {
    raise(ErrorCode::Dimension, "dense_forward: input must be 1-D or 2-D");
  }
  Tensor y = batch == 1 && x.shape.size() == 1 ? Tensor::zeros({layer.out})
                                               : Tensor::zeros({batch, layer.out});
  dense_forward(layer, x.data(), batch, y.data(), cache);
  return y;
}

void dense_backward(const DenseLayer& layer, const DenseCache& cache,
                    const float* grad_out, float* grad_x, Tensor& grad_w,
                    Tensor& grad_b) {
  if (!cache.valid) {
    raise(ErrorCode::State, "dense_backward: no forward pass has been cached");
  }
  const std::size_t batch = cache.batch;
  // Push grad_out through the activation first.
  std::vector<float> delta(batch * layer.out);
  for (std::size_t i = 0; i < delta.size(); ++i) {
    delta[i] = activation_grad(layer.activation, cache.pre[i], grad_out[i]);
  }
  if (grad_w.shape != layer.weight.shape) grad_w = Tensor::zeros(layer.weight.shape);
  if (grad_b.shape != layer.bias.shape) grad_b = Tensor::zeros(layer.bias.shape);
  gemm::grad_weight(delta.data(), cache.input.data(), grad_w.data(), batch,
                    layer.in, layer.out);
  // Bias gradient: column sums of delta, accumulated serially for a result
  // independent of worker count.
  std::fill(grad_b.v.begin(), grad_b.v.end(), 0.0f);
  for (std::size_t b = 0; b < batch; ++b) {
    const float* row = delta.data() + b * layer.out;
    for (std::size_t o = 0; o < layer.out; ++o) grad_b[o] += row[o];
  }
  if (grad_x) {
    gemm::grad_input(delta.data(), layer.weight.data(), grad_x, batch, layer.in,
                     layer.out);
  }
}

DenseGradients dense_backward(const DenseLayer& layer, const DenseCache& cache,
                              const Tensor& grad_out) {
  if (cache.valid && grad_out.size() != cache.batch * layer.out) {
    raise(ErrorCode::Dimension, "dense_backward: grad size does not match cached batch");
  }
  DenseGradients g;
  g.grad_w = Tensor::zeros(layer.weight.shape);
  g.grad_b = Tensor::zeros(layer.bias.shape);
  g.grad_x = cache.batch == 1 && grad_out.shape.size() == 1
                 ? Tensor::zeros({layer.in})
                 : Tensor::zeros({cache.batch, layer.in});
  dense_backward(layer, cache, grad_out.data(), g.grad_x.data(), g.grad_w, g.grad_b);
  return g;
}

AdamState AdamState::for_param(const Tensor& param, float lr) {
  AdamState s;
  s.m = Tensor::zeros(param.shape);
  s.v = Tensor::zeros(param.shape);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, Tensor& param, const Tensor& grad) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, state.m, "adam_step");
  // A NaN/Inf gradient would silently poison the moment buffers, so refuse
  // it up front.  |g| sums in double, which cannot overflow for any tensor
  // small enough to fit in memory, so a finite sum proves every entry finite.
  double abs_sum = 0.0;
  for (const float gi : grad.v) abs_sum += std::fabs(static_cast<double>(gi));
  if (!std::isfinite(abs_sum)) {
    raise(ErrorCode::Numeric, "adam_step: non-finite gradient");
  }
  state.step += 1;
  constexpr float kBeta1 = 0.9f;
  constexpr float kBeta2 = 0.999f;
  constexpr float kEps = 1e-8f;
  const float corr1 =
      1.0f / (1.0f - static_cast<float>(std::pow(0.9, static_cast<double>(state.step))));
  const float corr2 =
      1.0f / (1.0f - static_cast<float>(std::pow(0.999, static_cast<double>(state.step))));
  const float lr = state.lr;
  float* p = param.data();
  float* m = state.m.data();
  float* v = state.v.data();
  const float* g = grad.data();
  const std::size_t n = param.size();
  // Branch-free elementwise loop: the compiler vectorizes it, and every op
  // (fma, sqrt, div) is IEEE-exact, so the result is machine-independent.
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = kBeta1 * m[i] + (1.0f - kBeta1) * g[i];
    v[i] = kBeta2 * v[i] + (1.0f - kBeta2) * g[i] * g[i];
    const float mhat = m[i] * corr1;
    const float vhat = v[i] * corr2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
  }
}

void init_dense(DenseLayer& layer, Rng& rng) {
  if (layer.activation == Activation::Relu) {
    // He-normal: std = sqrt(2 / fan_in).
    const float std_dev = std::sqrt(2.0f / static_cast<float>(layer.in));
    for (float& w : layer.weight.v) {
      w = std_dev * static_cast<float>(rng.next_normal());
    }
  } else {
    // Xavier-uniform: limit = sqrt(6 / (fan_in + fan_out)).
    const float limit = std::sqrt(6.0f / static_cast<float>(layer.in + layer.out));
    for (float& w : layer.weight.v) {
      w = limit * (2.0f * static_cast<float>(rng.next_uniform()) - 1.0f);
    }
  }
  std::fill(layer.bias.v.begin(), layer.bias.v.end(), 0.0f);
}

void sample_standard_normal(Rng& rng, std::span<float> out) { rng.fill_normal(out); }

}  // namespace icbir
