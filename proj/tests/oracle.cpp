#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icbir/error.hpp"

namespace icbir::oracle {
namespace {

std::vector<double> widen(const Tensor& t) {
  return std::vector<double>(t.v.begin(), t.v.end());
}

// y = act(W x + b), plain triple loop, double accumulation throughout.
std::vector<double> affine(const std::vector<double>& w, const std::vector<double>& b,
                           const std::vector<double>& x, std::size_t out, std::size_t in) {
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

void relu_inplace(std::vector<double>& v) {
  for (double& e : v) e = e > 0.0 ? e : 0.0;
}

}  // namespace

LossInputs LossInputs::from_library(const VaeModel& model, const PrototypeBank& bank,
                                    const SliceSample& sample, const Tensor& eps,
                                    float temperature) {
  LossInputs in;
  in.s = model.cfg.s;
  in.hidden = model.cfg.h;
  in.latent = model.cfg.l;
  in.n_classes = bank.n_classes;
  in.n_section = bank.n_section;
  in.orientation_axis = axis_of(sample.orientation);
  in.slice_index = sample.slice_index;
  in.true_class = sample.class_label;
  in.beta = model.cfg.beta;
  in.gamma = model.cfg.gamma;
  in.temperature = temperature;

  const auto tensors = model.parameters();
  for (std::size_t i = 0; i < tensors.size(); ++i) in.params[i] = widen(*tensors[i]);
  in.bank = widen(bank.protos);
  in.x = widen(sample.pixels);
  in.eps = widen(eps);
  return in;
}

std::size_t LossInputs::scalar_count() const {
  std::size_t n = bank.size();
  for (const auto& p : params) n += p.size();
  return n;
}

double& LossInputs::scalar(std::size_t index) {
  for (auto& p : params) {
    if (index < p.size()) return p[index];
    index -= p.size();
  }
  if (index < bank.size()) return bank[index];
  raise(ErrorCode::Parameter, "oracle: scalar index out of range");
}

LossParts total_loss(const LossInputs& in) {
  const std::size_t s2 = in.s * in.s;
  const std::size_t h = in.hidden;
  const std::size_t l = in.latent;
  const std::size_t k = in.n_classes;

  // Encoder trunk and heads.
  std::vector<double> a1 = affine(in.params[0], in.params[1], in.x, h, s2);
  relu_inplace(a1);
  std::vector<double> mu = affine(in.params[2], in.params[3], a1, l, h);
  std::vector<double> lv = affine(in.params[4], in.params[5], a1, l, h);
  for (double& e : lv) e = std::clamp(e, -10.0, 10.0);

  // Reparameterization.
  std::vector<double> z(l);
  for (std::size_t i = 0; i < l; ++i) z[i] = mu[i] + std::exp(0.5 * lv[i]) * in.eps[i];

  // Decoder.
  std::vector<double> a2 = affine(in.params[6], in.params[7], z, h, l);
  relu_inplace(a2);
  std::vector<double> xhat = affine(in.params[8], in.params[9], a2, s2, h);
  for (double& e : xhat) e = 1.0 / (1.0 + std::exp(-e));

  LossParts parts;

  double sq = 0.0;
  for (std::size_t i = 0; i < s2; ++i) {
    const double d = in.x[i] - xhat[i];
    sq += d * d;
  }
  parts.recon = sq / static_cast<double>(s2);

  double kl = 0.0;
  for (std::size_t i = 0; i < l; ++i) kl += std::exp(lv[i]) + mu[i] * mu[i] - 1.0 - lv[i];
  parts.kl = 0.5 * kl;

  // Cross-entropy against the K prototypes of this (orientation, slice) cell.
  const std::size_t cell =
      ((static_cast<std::size_t>(in.orientation_axis) * in.n_section + (in.slice_index - 1)) *
       k) *
      l;
  double zn = 0.0;
  for (std::size_t i = 0; i < l; ++i) zn += z[i] * z[i];
  zn = std::sqrt(zn);
  std::vector<double> logits(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double* proto = in.bank.data() + cell + c * l;
    double dot = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
      dot += z[i] * proto[i];
      pn += proto[i] * proto[i];
    }
    pn = std::sqrt(pn);
    double cosv = dot / (zn * pn);
    logits[c] = std::clamp(cosv, -1.0, 1.0) / in.temperature;
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& e : logits) {
    e = std::exp(e - max_logit);
    denom += e;
  }
  const double p_true = logits[static_cast<std::size_t>(in.true_class - 1)] / denom;
  parts.ce = -std::log(std::max(p_true, 1e-12));

  parts.total = parts.recon + in.beta * parts.kl + in.gamma * parts.ce;
  return parts;
}

FdMargins fd_margins(const LossInputs& in) {
  const std::size_t s2 = in.s * in.s;
  const std::size_t h = in.hidden;
  const std::size_t l = in.latent;
  const std::size_t k = in.n_classes;

  FdMargins m;
  m.min_relu_abs = std::numeric_limits<double>::infinity();
  m.min_logvar_room = std::numeric_limits<double>::infinity();

  std::vector<double> pre1 = affine(in.params[0], in.params[1], in.x, h, s2);
  for (double e : pre1) m.min_relu_abs = std::min(m.min_relu_abs, std::abs(e));
  relu_inplace(pre1);
  std::vector<double> mu = affine(in.params[2], in.params[3], pre1, l, h);
  std::vector<double> lv = affine(in.params[4], in.params[5], pre1, l, h);
  for (double e : lv) m.min_logvar_room = std::min(m.min_logvar_room, 10.0 - std::abs(e));
  for (double& e : lv) e = std::clamp(e, -10.0, 10.0);
  std::vector<double> z(l);
  for (std::size_t i = 0; i < l; ++i) z[i] = mu[i] + std::exp(0.5 * lv[i]) * in.eps[i];

  const std::vector<double> pre2 = affine(in.params[6], in.params[7], z, h, l);
  for (double e : pre2) m.min_relu_abs = std::min(m.min_relu_abs, std::abs(e));

  const std::size_t cell =
      ((static_cast<std::size_t>(in.orientation_axis) * in.n_section + (in.slice_index - 1)) *
       k) *
      l;
  double zn = 0.0;
  for (std::size_t i = 0; i < l; ++i) zn += z[i] * z[i];
  zn = std::sqrt(zn);
  for (std::size_t c = 0; c < k; ++c) {
    const double* proto = in.bank.data() + cell + c * l;
    double dot = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < l; ++i) {
      dot += z[i] * proto[i];
      pn += proto[i] * proto[i];
    }
    m.max_abs_cosine = std::max(m.max_abs_cosine, std::abs(dot / (zn * std::sqrt(pn))));
  }
  return m;
}

double fd_gradient(LossInputs in, std::size_t index, double h) {
  double& target = in.scalar(index);
  const double base = target;
  target = base + h;
  const double up = total_loss(in).total;
  target = base - h;
  const double down = total_loss(in).total;
  target = base;
  return (up - down) / (2.0 * h);
}

}  // namespace icbir::oracle
