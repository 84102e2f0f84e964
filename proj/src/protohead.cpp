#include "icbir/protohead.hpp"

#include <algorithm>
#include <cmath>

#include "icbir/rng.hpp"

namespace icbir {
namespace {

double dot_d(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

double norm_d(const float* a, std::size_t n) { return std::sqrt(dot_d(a, a, n)); }

void require_positive_temperature(float temperature) {
  if (!(temperature > 0.0f)) {
    raise(ErrorCode::Parameter, "temperature must be positive");
  }
}

}  // namespace

PrototypeBank PrototypeBank::make(std::size_t n_section, std::size_t n_classes,
                                  std::size_t latent,
                                  std::vector<std::string> class_names) {
  if (n_classes < 2) raise(ErrorCode::Config, "prototype bank needs at least 2 classes");
  if (n_section == 0 || latent == 0) {
    raise(ErrorCode::Dimension, "prototype bank dims must be positive");
  }
  if (class_names.size() != n_classes) {
    raise(ErrorCode::Config, "class name count must equal the class count");
  }
  PrototypeBank bank;
  bank.n_section = n_section;
  bank.n_classes = n_classes;
  bank.latent = latent;
  bank.class_names = std::move(class_names);
  bank.protos = Tensor::zeros({3, n_section, n_classes, latent});
  return bank;
}

std::size_t PrototypeBank::cell_offset(Orientation orientation, std::size_t slice_index,
                                       std::size_t class_index) const {
  if (slice_index < 1 || slice_index > n_section) {
    raise(ErrorCode::Parameter, "slice index " + std::to_string(slice_index) +
                                    " outside [1, " + std::to_string(n_section) + "]");
  }
  if (class_index < 1 || class_index > n_classes) {
    raise(ErrorCode::Parameter, "class index " + std::to_string(class_index) +
                                    " outside [1, " + std::to_string(n_classes) + "]");
  }
  const std::size_t o = static_cast<std::size_t>(axis_of(orientation));
  return ((o * n_section + (slice_index - 1)) * n_classes + (class_index - 1)) * latent;
}

float* PrototypeBank::at(Orientation orientation, std::size_t slice_index,
                         std::size_t class_index) {
  return protos.data() + cell_offset(orientation, slice_index, class_index);
}

const float* PrototypeBank::at(Orientation orientation, std::size_t slice_index,
                               std::size_t class_index) const {
  return protos.data() + cell_offset(orientation, slice_index, class_index);
}

float cosine_similarity(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "cosine_similarity");
  const double na = norm_d(a.data(), a.size());
  const double nb = norm_d(b.data(), b.size());
  if (na < kNormFloor || nb < kNormFloor) {
    raise(ErrorCode::Degenerate, "cosine_similarity: vector norm below 1e-6");
  }
  const double s = dot_d(a.data(), b.data(), a.size()) / (na * nb);
  return static_cast<float>(std::clamp(s, -1.0, 1.0));
}

Tensor softmax(const Tensor& logits, float temperature) {
  require_positive_temperature(temperature);
  if (logits.size() == 0) raise(ErrorCode::Dimension, "softmax: empty input");
  const std::size_t k = logits.size();
  double max_l = -1e300;
  for (std::size_t i = 0; i < k; ++i) {
    const double l = static_cast<double>(logits[i]) / static_cast<double>(temperature);
    max_l = std::max(max_l, l);
  }
  Tensor p = Tensor::zeros(logits.shape);
  double sum = 0.0;
  std::vector<double> e(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double l = static_cast<double>(logits[i]) / static_cast<double>(temperature);
    e[i] = std::exp(l - max_l);
    sum += e[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = static_cast<float>(e[i] / sum);
  }
  return p;
}

ClassScores score_vectors(const float* z, std::size_t dim, const float* protos,
                          std::size_t n_classes, float temperature) {
  require_positive_temperature(temperature);
  if (dim == 0 || n_classes < 2) {
    raise(ErrorCode::Dimension, "score_vectors: need dim >= 1 and K >= 2");
  }
  const double nz = norm_d(z, dim);
  if (nz < kNormFloor) {
    raise(ErrorCode::Degenerate, "score_vectors: input norm below 1e-6");
  }
  ClassScores out;
  out.s = Tensor::zeros({n_classes});
  for (std::size_t k = 0; k < n_classes; ++k) {
    const float* pk = protos + k * dim;
    const double np = norm_d(pk, dim);
    if (np < kNormFloor) {
      raise(ErrorCode::Degenerate, "score_vectors: prototype " + std::to_string(k + 1) +
                                       " norm below 1e-6");
    }
    const double s = dot_d(z, pk, dim) / (nz * np);
    out.s[k] = static_cast<float>(std::clamp(s, -1.0, 1.0));
  }
  out.p = softmax(out.s, temperature);
  out.s_star = 1;
  for (std::size_t k = 1; k < n_classes; ++k) {
    // Strict > keeps the lowest index on ties.
    if (out.s[k] > out.s[static_cast<std::size_t>(out.s_star - 1)]) {
      out.s_star = static_cast<int>(k + 1);
    }
  }
  return out;
}

ClassScores score_slice(const PrototypeBank& bank, const Tensor& z,
                        Orientation orientation, std::size_t slice_index,
                        float temperature) {
  if (z.size() != bank.latent) {
    raise(ErrorCode::Dimension, "score_slice: z length " + std::to_string(z.size()) +
                                    " != latent " + std::to_string(bank.latent));
  }
  const float* cell = bank.at(orientation, slice_index, 1);
  return score_vectors(z.data(), bank.latent, cell, bank.n_classes, temperature);
}

float cross_entropy(const Tensor& p, const Tensor& t) {
  require_same_shape(p, t, "cross_entropy");
  int ones = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::fabs(t[i] - 1.0f) < 1e-6f) {
      ++ones;
    } else if (std::fabs(t[i]) > 1e-6f) {
      raise(ErrorCode::Input, "cross_entropy: target is not one-hot");
    }
  }
  if (ones != 1) raise(ErrorCode::Input, "cross_entropy: target is not one-hot");
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] > 0.5f) {
      const double clipped = std::max(static_cast<double>(p[i]), 1e-12);
      // The platform-stable log keeps loss values bit-identical everywhere.
      loss -= deterministic_log(clipped);
    }
  }
  return static_cast<float>(loss);
}

float accumulate_cross_entropy_gradients(const float* z, std::size_t dim,
                                         const float* protos, std::size_t n_classes,
                                         int true_class, float temperature, float scale,
                                         float* grad_z, float* grad_protos) {
  require_positive_temperature(temperature);
  if (true_class < 1 || static_cast<std::size_t>(true_class) > n_classes) {
    raise(ErrorCode::Parameter, "true class outside [1, K]");
  }
  const double nz = norm_d(z, dim);
  if (nz < kNormFloor) {
    raise(ErrorCode::Degenerate, "cross_entropy_gradients: input norm below 1e-6");
  }

  // Forward: s_k = zhat . phat_k, p = softmax(s / T), C = -ln p_true.
  std::vector<double> np(n_classes), s(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    const float* pk = protos + k * dim;
    np[k] = norm_d(pk, dim);
    if (np[k] < kNormFloor) {
      raise(ErrorCode::Degenerate, "cross_entropy_gradients: prototype norm below 1e-6");
    }
    s[k] = dot_d(z, pk, dim) / (nz * np[k]);
  }
  const double t_inv = 1.0 / static_cast<double>(temperature);
  double max_l = -1e300;
  for (std::size_t k = 0; k < n_classes; ++k) max_l = std::max(max_l, s[k] * t_inv);
  std::vector<double> p(n_classes);
  double sum = 0.0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    p[k] = std::exp(s[k] * t_inv - max_l);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  const double p_true = std::max(p[static_cast<std::size_t>(true_class - 1)], 1e-12);
  const float loss = static_cast<float>(-deterministic_log(p_true));

  // Backward.  dC/ds_k = (p_k - t_k)/T; through the cosine,
  //   dC/dz   = sum_k dC/ds_k * (phat_k - s_k zhat) / |z|
  //   dC/dP_k =       dC/ds_k * (zhat - s_k phat_k) / |P_k|
  // The P_k gradient is orthogonal to P_k: normalization removes the radial
  // component.
  const double scale_d = static_cast<double>(scale);
  for (std::size_t k = 0; k < n_classes; ++k) {
    const float* pk = protos + k * dim;
    const double t_k = (static_cast<int>(k) + 1 == true_class) ? 1.0 : 0.0;
    const double ds = (p[k] - t_k) * t_inv * scale_d;
    if (grad_protos) {
      float* gp = grad_protos + k * dim;
      const double inv_np = 1.0 / np[k];
      for (std::size_t i = 0; i < dim; ++i) {
        const double zhat_i = static_cast<double>(z[i]) / nz;
        const double phat_i = static_cast<double>(pk[i]) * inv_np;
        gp[i] += static_cast<float>(ds * (zhat_i - s[k] * phat_i) * inv_np);
      }
    }
    if (grad_z) {
      const double inv_nz = 1.0 / nz;
      const double inv_np = 1.0 / np[k];
      for (std::size_t i = 0; i < dim; ++i) {
        const double zhat_i = static_cast<double>(z[i]) * inv_nz;
        const double phat_i = static_cast<double>(pk[i]) * inv_np;
        grad_z[i] += static_cast<float>(ds * (phat_i - s[k] * zhat_i) * inv_nz);
      }
    }
  }
  return loss;
}

CrossEntropyGrads cross_entropy_gradients(const float* z, std::size_t dim,
                                          const float* protos, std::size_t n_classes,
                                          int true_class, float temperature) {
  CrossEntropyGrads out;
  out.grad_z = Tensor::zeros({dim});
  out.grad_protos = Tensor::zeros({n_classes, dim});
  out.loss = accumulate_cross_entropy_gradients(z, dim, protos, n_classes, true_class,
                                                temperature, 1.0f, out.grad_z.data(),
                                                out.grad_protos.data());
  return out;
}

CrossEntropyGrads prototype_gradients(const PrototypeBank& bank, const Tensor& z,
                                      Orientation orientation, std::size_t slice_index,
                                      const Tensor& t, float temperature) {
  if (z.size() != bank.latent) {
    raise(ErrorCode::Dimension, "prototype_gradients: z length mismatch");
  }
  if (t.size() != bank.n_classes) {
    raise(ErrorCode::Dimension, "prototype_gradients: target length mismatch");
  }
  int true_class = 0;
  int ones = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (std::fabs(t[k] - 1.0f) < 1e-6f) {
      true_class = static_cast<int>(k + 1);
      ++ones;
    } else if (std::fabs(t[k]) > 1e-6f) {
      raise(ErrorCode::Input, "prototype_gradients: target is not one-hot");
    }
  }
  if (ones != 1) raise(ErrorCode::Input, "prototype_gradients: target is not one-hot");
  const float* cell = bank.at(orientation, slice_index, 1);
  return cross_entropy_gradients(z.data(), bank.latent, cell, bank.n_classes, true_class,
                                 temperature);
}

void floor_prototype_norms(PrototypeBank& bank) {
  const std::size_t cells = 3 * bank.n_section * bank.n_classes;
  for (std::size_t c = 0; c < cells; ++c) {
    float* p = bank.protos.data() + c * bank.latent;
    const double norm = norm_d(p, bank.latent);
    if (norm >= kNormFloor) continue;
    if (norm == 0.0) {
      p[0] = kNormFloor;  // no direction to preserve; pick a fixed one
      continue;
    }
    const float rescale = kNormFloor / static_cast<float>(norm);
    for (std::size_t i = 0; i < bank.latent; ++i) p[i] *= rescale;
  }
}

Tensor one_hot(std::size_t n_classes, int class_index) {
  if (class_index < 1 || static_cast<std::size_t>(class_index) > n_classes) {
    raise(ErrorCode::Parameter, "one_hot: class index outside [1, K]");
  }
  Tensor t = Tensor::zeros({n_classes});
  t[static_cast<std::size_t>(class_index - 1)] = 1.0f;
  return t;
}

}  // namespace icbir
