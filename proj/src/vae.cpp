#include "icbir/vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace icbir {
namespace {

constexpr std::size_t kEncodeBatch = 64;

inline float clamp_logvar(float raw) {
  return std::clamp(raw, kLogvarClampMin, kLogvarClampMax);
}

// Clamp gradient convention: pass-through strictly inside the range, zero at
// and beyond the boundary (mirrors relu'(0) = 0).
inline bool logvar_in_range(float raw) {
  return raw > kLogvarClampMin && raw < kLogvarClampMax;
}

}  // namespace

VaeModel VaeModel::init(const VaeConfig& cfg, std::uint64_t seed) {
  if (cfg.s < 2 || cfg.h == 0 || cfg.l == 0) {
    raise(ErrorCode::Config, "model sizes must be positive (S >= 2)");
  }
  if (cfg.beta < 0.0f || cfg.gamma < 0.0f) {
    raise(ErrorCode::Config, "beta and gamma must be non-negative");
  }
  VaeModel model;
  model.cfg = cfg;
  const std::size_t s2 = cfg.s * cfg.s;
  model.enc_hidden = DenseLayer::make(s2, cfg.h, Activation::Relu);
  model.mu_head = DenseLayer::make(cfg.h, cfg.l, Activation::Identity);
  model.logvar_head = DenseLayer::make(cfg.h, cfg.l, Activation::Identity);
  model.dec_hidden = DenseLayer::make(cfg.l, cfg.h, Activation::Relu);
  model.dec_out = DenseLayer::make(cfg.h, s2, Activation::Sigmoid);
  // One derived stream per layer keeps initialization independent of any
  // other consumer of the master seed.
  DenseLayer* layers[5] = {&model.enc_hidden, &model.mu_head, &model.logvar_head,
                           &model.dec_hidden, &model.dec_out};
  for (std::size_t i = 0; i < 5; ++i) {
    Rng stream = Rng::fork(seed, 10 + i);
    init_dense(*layers[i], stream);
  }
  return model;
}

std::vector<Tensor*> VaeModel::parameters() {
  return {&enc_hidden.weight, &enc_hidden.bias, &mu_head.weight,     &mu_head.bias,
          &logvar_head.weight, &logvar_head.bias, &dec_hidden.weight, &dec_hidden.bias,
          &dec_out.weight,     &dec_out.bias};
}

std::vector<const Tensor*> VaeModel::parameters() const {
  return {&enc_hidden.weight, &enc_hidden.bias, &mu_head.weight,     &mu_head.bias,
          &logvar_head.weight, &logvar_head.bias, &dec_hidden.weight, &dec_hidden.bias,
          &dec_out.weight,     &dec_out.bias};
}

std::vector<std::string> VaeModel::parameter_names() {
  return {"enc_hidden.weight", "enc_hidden.bias",  "mu_head.weight",
          "mu_head.bias",      "logvar_head.weight", "logvar_head.bias",
          "dec_hidden.weight", "dec_hidden.bias",  "dec_out.weight",
          "dec_out.bias"};
}

void encode_batch(const VaeModel& model, const float* x, std::size_t batch, float* mu,
                  float* logvar) {
  const std::size_t h = model.cfg.h;
  std::vector<float> a1(batch * h);
  dense_forward(model.enc_hidden, x, batch, a1.data());
  dense_forward(model.mu_head, a1.data(), batch, mu);
  dense_forward(model.logvar_head, a1.data(), batch, logvar);
  const std::size_t n = batch * model.cfg.l;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(mu[i]) || !std::isfinite(logvar[i])) {
      raise(ErrorCode::Numeric, "encode: non-finite activation");
    }
    logvar[i] = clamp_logvar(logvar[i]);
  }
}

static LatentCode encode_impl(const VaeModel& model, const Tensor& pixels,
                              const float* eps) {
  const std::size_t s2 = model.cfg.s * model.cfg.s;
  if (pixels.size() != s2) {
    raise(ErrorCode::Dimension, "encode: expected " + std::to_string(s2) +
                                    " pixels, got " + std::to_string(pixels.size()));
  }
  LatentCode code;
  code.mu = Tensor::zeros({model.cfg.l});
  code.logvar = Tensor::zeros({model.cfg.l});
  encode_batch(model, pixels.data(), 1, code.mu.data(), code.logvar.data());
  code.z = code.mu;
  if (eps) {
    for (std::size_t i = 0; i < model.cfg.l; ++i) {
      code.z[i] = code.mu[i] + std::exp(0.5f * code.logvar[i]) * eps[i];
    }
  }
  return code;
}

LatentCode encode(const VaeModel& model, const Tensor& pixels, EncodeMode mode,
                  Rng* rng, Tensor* eps_out) {
  if (mode == EncodeMode::Inference) {
    if (eps_out) *eps_out = Tensor::zeros({model.cfg.l});
    return encode_impl(model, pixels, nullptr);
  }
  if (!rng) raise(ErrorCode::Parameter, "encode: training mode needs an rng");
  Tensor eps = Tensor::zeros({model.cfg.l});
  rng->fill_normal(std::span<float>(eps.v));
  if (eps_out) *eps_out = eps;
  return encode_impl(model, pixels, eps.data());
}

LatentCode encode_with_eps(const VaeModel& model, const Tensor& pixels,
                           const Tensor& eps) {
  if (eps.size() != model.cfg.l) {
    raise(ErrorCode::Dimension, "encode: eps length must equal the latent width");
  }
  return encode_impl(model, pixels, eps.data());
}

Tensor decode(const VaeModel& model, const Tensor& z) {
  if (z.size() != model.cfg.l) {
    raise(ErrorCode::Dimension, "decode: z length " + std::to_string(z.size()) +
                                    " != latent " + std::to_string(model.cfg.l));
  }
  require_finite(z, "decode input");
  Tensor a1 = dense_forward(model.dec_hidden, z);
  Tensor xhat = dense_forward(model.dec_out, a1);
  require_finite(xhat, "decode output");
  return xhat;
}

float reconstruction_loss(const Tensor& x, const Tensor& xhat) {
  if (x.size() != xhat.size()) {
    raise(ErrorCode::Dimension, "reconstruction_loss: length mismatch");
  }
  if (x.size() == 0) raise(ErrorCode::Dimension, "reconstruction_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(xhat[i]);
    acc += d * d;
  }
  return static_cast<float>(acc / static_cast<double>(x.size()));
}

float kl_divergence(const Tensor& mu, const Tensor& logvar) {
  require_same_shape(mu, logvar, "kl_divergence");
  require_finite(mu, "kl_divergence mu");
  require_finite(logvar, "kl_divergence logvar");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double lv = static_cast<double>(logvar[i]);
    const double ev = std::exp(lv);
    if (!std::isfinite(ev)) {
      raise(ErrorCode::Numeric, "kl_divergence: exp(logvar) overflow");
    }
    const double m = static_cast<double>(mu[i]);
    acc += ev + m * m - 1.0 - lv;
  }
  return static_cast<float>(0.5 * acc);
}

static LossBreakdown total_loss_impl(const VaeModel& model, const PrototypeBank& bank,
                                     const SliceSample& sample, const float* eps,
                                     float temperature) {
  for (float p : sample.pixels.v) {
    if (!(p >= 0.0f && p <= 1.0f)) {
      raise(ErrorCode::Input, "total_loss: slice pixels must lie in [0,1]");
    }
  }
  const LatentCode code = encode_impl(model, sample.pixels, eps);
  const Tensor xhat = decode(model, code.z);
  LossBreakdown out;
  out.recon = reconstruction_loss(sample.pixels, xhat);
  out.kl = kl_divergence(code.mu, code.logvar);
  if (model.cfg.gamma > 0.0f) {
    if (bank.latent != model.cfg.l || sample.slice_index > bank.n_section) {
      raise(ErrorCode::Config,
            "total_loss: prototype bank does not cover this slice position");
    }
    const ClassScores scores =
        score_slice(bank, code.z, sample.orientation, sample.slice_index, temperature);
    out.ce = cross_entropy(scores.p, one_hot(bank.n_classes, sample.class_label));
  }
  out.total = static_cast<float>(static_cast<double>(out.recon) +
                                 static_cast<double>(model.cfg.beta) * out.kl +
                                 static_cast<double>(model.cfg.gamma) * out.ce);
  return out;
}

LossBreakdown total_loss(const VaeModel& model, const PrototypeBank& bank,
                         const SliceSample& sample, Rng& rng, float temperature) {
  Tensor eps = Tensor::zeros({model.cfg.l});
  rng.fill_normal(std::span<float>(eps.v));
  return total_loss_impl(model, bank, sample, eps.data(), temperature);
}

LossBreakdown total_loss_with_eps(const VaeModel& model, const PrototypeBank& bank,
                                  const SliceSample& sample, const Tensor& eps,
                                  float temperature) {
  if (eps.size() != model.cfg.l) {
    raise(ErrorCode::Dimension, "total_loss: eps length must equal the latent width");
  }
  return total_loss_impl(model, bank, sample, eps.data(), temperature);
}

LossGradients loss_gradients(const VaeModel& model, const PrototypeBank& bank,
                             const SliceSample& sample, const Tensor& eps,
                             float temperature) {
  const std::size_t s2 = model.cfg.s * model.cfg.s;
  const std::size_t h = model.cfg.h;
  const std::size_t l = model.cfg.l;
  if (sample.pixels.size() != s2) {
    raise(ErrorCode::Dimension, "loss_gradients: expected " + std::to_string(s2) +
                                    " pixels, got " +
                                    std::to_string(sample.pixels.size()));
  }
  if (eps.size() != l) {
    raise(ErrorCode::Dimension, "loss_gradients: eps length must equal the latent width");
  }
  for (float p : sample.pixels.v) {
    if (!(p >= 0.0f && p <= 1.0f)) {
      raise(ErrorCode::Input, "loss_gradients: slice pixels must lie in [0,1]");
    }
  }
  const float beta = model.cfg.beta;
  const float gamma = model.cfg.gamma;
  const bool use_protos = gamma > 0.0f;
  if (use_protos &&
      (bank.latent != l || sample.slice_index > bank.n_section)) {
    raise(ErrorCode::Config,
          "loss_gradients: prototype bank does not cover this slice position");
  }

  // Forward, mirroring the training loop with batch 1.
  std::vector<float> a1(h), mu(l), lv_raw(l), lv(l), sig(l), z(l), a2(h), xhat(s2);
  DenseCache c1, c2, c3, c4, c5;
  dense_forward(model.enc_hidden, sample.pixels.data(), 1, a1.data(), &c1);
  dense_forward(model.mu_head, a1.data(), 1, mu.data(), &c2);
  dense_forward(model.logvar_head, a1.data(), 1, lv_raw.data(), &c3);
  for (std::size_t i = 0; i < l; ++i) {
    lv[i] = clamp_logvar(lv_raw[i]);
    sig[i] = std::exp(0.5f * lv[i]);
    z[i] = mu[i] + sig[i] * eps[i];
  }
  dense_forward(model.dec_hidden, z.data(), 1, a2.data(), &c4);
  dense_forward(model.dec_out, a2.data(), 1, xhat.data(), &c5);

  LossGradients out;
  out.bank = Tensor::zeros(bank.protos.shape);

  std::vector<float> gxhat(s2), ga2(h), gz(l), gz_ce(l, 0.0f), gmu(l), glv(l), ga1(h),
      ga1b(h);
  const float recon_scale = 2.0f / static_cast<float>(s2);
  double recon = 0.0, kl = 0.0, ce = 0.0;
  for (std::size_t j = 0; j < s2; ++j) {
    const float diff = xhat[j] - sample.pixels[j];
    recon += static_cast<double>(diff) * static_cast<double>(diff);
    gxhat[j] = recon_scale * diff;
  }
  recon /= static_cast<double>(s2);
  for (std::size_t j = 0; j < l; ++j) {
    const double ev = static_cast<double>(sig[j]) * static_cast<double>(sig[j]);
    kl += 0.5 * (ev + static_cast<double>(mu[j]) * static_cast<double>(mu[j]) - 1.0 -
                 static_cast<double>(lv[j]));
  }
  if (use_protos) {
    const float* cell = bank.at(sample.orientation, sample.slice_index, 1);
    float* gcell =
        out.bank.data() + bank.cell_offset(sample.orientation, sample.slice_index, 1);
    ce = accumulate_cross_entropy_gradients(z.data(), l, cell, bank.n_classes,
                                            sample.class_label, temperature, gamma,
                                            gz_ce.data(), gcell);
  }
  out.loss.recon = static_cast<float>(recon);
  out.loss.kl = static_cast<float>(kl);
  out.loss.ce = static_cast<float>(ce);
  out.loss.total = static_cast<float>(recon + static_cast<double>(beta) * kl +
                                      static_cast<double>(gamma) * ce);

  out.params.reserve(10);
  for (const Tensor* p : model.parameters()) out.params.push_back(Tensor::zeros(p->shape));
  Tensor& g_enc_w = out.params[0];
  Tensor& g_enc_b = out.params[1];
  Tensor& g_mu_w = out.params[2];
  Tensor& g_mu_b = out.params[3];
  Tensor& g_lv_w = out.params[4];
  Tensor& g_lv_b = out.params[5];
  Tensor& g_dh_w = out.params[6];
  Tensor& g_dh_b = out.params[7];
  Tensor& g_do_w = out.params[8];
  Tensor& g_do_b = out.params[9];

  dense_backward(model.dec_out, c5, gxhat.data(), ga2.data(), g_do_w, g_do_b);
  dense_backward(model.dec_hidden, c4, ga2.data(), gz.data(), g_dh_w, g_dh_b);
  for (std::size_t i = 0; i < l; ++i) gz[i] += gz_ce[i];
  for (std::size_t i = 0; i < l; ++i) {
    const float gzi = gz[i];
    gmu[i] = gzi + beta * mu[i];
    const float glvi =
        gzi * eps[i] * 0.5f * sig[i] + beta * 0.5f * (sig[i] * sig[i] - 1.0f);
    glv[i] = logvar_in_range(lv_raw[i]) ? glvi : 0.0f;
  }
  dense_backward(model.mu_head, c2, gmu.data(), ga1.data(), g_mu_w, g_mu_b);
  dense_backward(model.logvar_head, c3, glv.data(), ga1b.data(), g_lv_w, g_lv_b);
  for (std::size_t i = 0; i < h; ++i) ga1[i] += ga1b[i];
  dense_backward(model.enc_hidden, c1, ga1.data(), nullptr, g_enc_w, g_enc_b);
  return out;
}

SliceDataset SliceDataset::from_volumes(const std::vector<Volume>& volumes) {
  if (volumes.empty()) raise(ErrorCode::Input, "slice dataset: no volumes");
  const std::size_t s = volumes.front().dims[0];
  SliceDataset ds;
  ds.s = s;
  ds.slice_pixels = s * s;
  ds.refs.reserve(volumes.size() * 3 * s);
  ds.pixels.resize(volumes.size() * 3 * s * ds.slice_pixels);
  std::size_t row = 0;
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    const Volume& volume = volumes[v];
    if (!volume.is_cubic() || volume.dims[0] != s) {
      raise(ErrorCode::Dimension, "slice dataset: volume '" + volume.id +
                                      "' is not on the shared canonical grid");
    }
    if (volume.label < 1 || volume.label > 255) {
      raise(ErrorCode::Input, "slice dataset: volume '" + volume.id +
                                  "' lacks a class label in [1,255]");
    }
    for (Orientation orientation : kOrientations) {
      for (std::size_t i = 1; i <= s; ++i, ++row) {
        extract_slice(volume, orientation, i, ds.pixels.data() + row * ds.slice_pixels);
        SliceRef ref;
        ref.volume = static_cast<std::uint32_t>(v);
        ref.orientation = static_cast<std::uint8_t>(axis_of(orientation));
        ref.slice_index = static_cast<std::uint16_t>(i);
        ref.label = static_cast<std::uint8_t>(volume.label);
        ds.refs.push_back(ref);
      }
    }
  }
  return ds;
}

PrototypeBank init_prototypes(const VaeModel& model, const SliceDataset& dataset,
                              std::vector<std::string> class_names) {
  if (dataset.refs.empty()) raise(ErrorCode::Input, "init_prototypes: empty dataset");
  const std::size_t k = class_names.size();
  if (k < 2) raise(ErrorCode::Config, "init_prototypes: need at least 2 classes");
  const std::size_t n_section = dataset.s;
  const std::size_t l = model.cfg.l;
  if (dataset.slice_pixels != model.cfg.s * model.cfg.s) {
    raise(ErrorCode::Dimension, "init_prototypes: dataset pixels do not match model S");
  }

  std::vector<double> sums(3 * n_section * k * l, 0.0);
  std::vector<std::size_t> counts(3 * n_section * k, 0);

  std::vector<float> mu(kEncodeBatch * l), lv(kEncodeBatch * l);
  const std::size_t n = dataset.refs.size();
  for (std::size_t begin = 0; begin < n; begin += kEncodeBatch) {
    const std::size_t batch = std::min(kEncodeBatch, n - begin);
    encode_batch(model, dataset.row(begin), batch, mu.data(), lv.data());
    for (std::size_t i = 0; i < batch; ++i) {
      const SliceRef& ref = dataset.refs[begin + i];
      if (ref.label < 1 || ref.label > k) {
        raise(ErrorCode::Input, "init_prototypes: label outside [1, K]");
      }
      const std::size_t cell =
          (static_cast<std::size_t>(ref.orientation) * n_section +
           (ref.slice_index - 1)) * k + (ref.label - 1);
      counts[cell] += 1;
      double* acc = sums.data() + cell * l;
      const float* m = mu.data() + i * l;
      for (std::size_t d = 0; d < l; ++d) acc[d] += static_cast<double>(m[d]);
    }
  }

  // Every (orientation, slice, class) cell needs at least one slice.
  std::string missing;
  std::size_t missing_count = 0;
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t sidx = 0; sidx < n_section; ++sidx) {
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[(o * n_section + sidx) * k + c] > 0) continue;
        ++missing_count;
        if (missing_count <= 8) {
          missing += std::string(" (") + to_string(static_cast<Orientation>(o)) +
                     ", slice " + std::to_string(sidx + 1) + ", class " +
                     std::to_string(c + 1) + ")";
        }
      }
    }
  }
  if (missing_count > 0) {
    if (missing_count > 8) {
      missing += " and " + std::to_string(missing_count - 8) + " more";
    }
    raise(ErrorCode::Input,
          "init_prototypes: no training slices for" + missing);
  }

  PrototypeBank bank = PrototypeBank::make(n_section, k, l, std::move(class_names));
  for (std::size_t cell = 0; cell < counts.size(); ++cell) {
    const double inv = 1.0 / static_cast<double>(counts[cell]);
    float* p = bank.protos.data() + cell * l;
    const double* acc = sums.data() + cell * l;
    for (std::size_t d = 0; d < l; ++d) {
      p[d] = static_cast<float>(acc[d] * inv);
    }
  }
  floor_prototype_norms(bank);
  return bank;
}

std::vector<EpochStats> train(VaeModel& model, PrototypeBank& bank,
                              const SliceDataset& dataset, const TrainConfig& cfg) {
  if (dataset.refs.empty()) raise(ErrorCode::Input, "train: empty dataset");
  if (cfg.batch == 0) raise(ErrorCode::Config, "train: batch size must be positive");
  if (!(cfg.lr > 0.0f)) raise(ErrorCode::Config, "train: learning rate must be positive");
  const std::size_t s2 = model.cfg.s * model.cfg.s;
  const std::size_t h = model.cfg.h;
  const std::size_t l = model.cfg.l;
  const float beta = model.cfg.beta;
  const float gamma = model.cfg.gamma;
  if (dataset.slice_pixels != s2) {
    raise(ErrorCode::Dimension, "train: dataset slice size does not match the model");
  }
  const bool use_protos = gamma > 0.0f;
  if (use_protos) {
    if (bank.latent != l) {
      raise(ErrorCode::Config, "train: prototype bank latent width mismatch");
    }
    for (const SliceRef& ref : dataset.refs) {
      if (ref.slice_index > bank.n_section || ref.label > bank.n_classes) {
        raise(ErrorCode::Config, "train: prototype bank does not cover the dataset");
      }
    }
  }

  const std::size_t n = dataset.refs.size();
  const std::size_t batch = cfg.batch;
  // Drop-last batching: floor(n / batch) full batches per epoch.  Fixed
  // batch geometry keeps every kernel call shape-stable (bit-reproducible);
  // the shuffle rotates which slices are left out.
  const std::size_t batches = n / batch;

  // Independent derived streams: shuffling and eps draws never interact.
  Rng shuffle_rng = Rng::fork(cfg.seed, 2);
  Rng eps_rng = Rng::fork(cfg.seed, 3);

  std::vector<Tensor*> params = model.parameters();
  if (use_protos) params.push_back(&bank.protos);
  std::vector<AdamState> opt;
  opt.reserve(params.size());
  for (Tensor* p : params) opt.push_back(AdamState::for_param(*p, cfg.lr));

  // Workspace (allocated once).
  std::vector<float> x(batch * s2), a1(batch * h), mu(batch * l), lv_raw(batch * l),
      lv(batch * l), sig(batch * l), eps(batch * l), z(batch * l), a2(batch * h),
      xhat(batch * s2);
  std::vector<float> gxhat(batch * s2), ga2(batch * h), gz(batch * l),
      gz_ce(batch * l), gmu(batch * l), glv(batch * l), ga1(batch * h),
      ga1b(batch * h);
  DenseCache c1, c2, c3, c4, c5;
  Tensor g_enc_w = Tensor::zeros(model.enc_hidden.weight.shape);
  Tensor g_enc_b = Tensor::zeros(model.enc_hidden.bias.shape);
  Tensor g_mu_w = Tensor::zeros(model.mu_head.weight.shape);
  Tensor g_mu_b = Tensor::zeros(model.mu_head.bias.shape);
  Tensor g_lv_w = Tensor::zeros(model.logvar_head.weight.shape);
  Tensor g_lv_b = Tensor::zeros(model.logvar_head.bias.shape);
  Tensor g_dh_w = Tensor::zeros(model.dec_hidden.weight.shape);
  Tensor g_dh_b = Tensor::zeros(model.dec_hidden.bias.shape);
  Tensor g_do_w = Tensor::zeros(model.dec_out.weight.shape);
  Tensor g_do_b = Tensor::zeros(model.dec_out.bias.shape);
  Tensor g_bank = use_protos ? Tensor::zeros(bank.protos.shape) : Tensor();

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);

  std::vector<EpochStats> curve;
  curve.reserve(cfg.epochs);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher–Yates with the dedicated shuffle stream.
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i + 1));
      std::swap(order[i], order[j]);
    }

    double sum_recon = 0.0, sum_kl = 0.0, sum_ce = 0.0;

    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::uint32_t* idx = order.data() + bi * batch;
      for (std::size_t i = 0; i < batch; ++i) {
        std::memcpy(x.data() + i * s2, dataset.row(idx[i]), s2 * sizeof(float));
      }

      // ---- forward ----
      dense_forward(model.enc_hidden, x.data(), batch, a1.data(), &c1);
      dense_forward(model.mu_head, a1.data(), batch, mu.data(), &c2);
      dense_forward(model.logvar_head, a1.data(), batch, lv_raw.data(), &c3);
      eps_rng.fill_normal(std::span<float>(eps));
      for (std::size_t i = 0; i < batch * l; ++i) {
        lv[i] = clamp_logvar(lv_raw[i]);
        sig[i] = std::exp(0.5f * lv[i]);
        z[i] = mu[i] + sig[i] * eps[i];
      }
      dense_forward(model.dec_hidden, z.data(), batch, a2.data(), &c4);
      dense_forward(model.dec_out, a2.data(), batch, xhat.data(), &c5);

      // ---- per-sample losses + loss-local gradients ----
      const float inv_b = 1.0f / static_cast<float>(batch);
      const float recon_grad_scale = 2.0f * inv_b / static_cast<float>(s2);
      double batch_recon = 0.0, batch_kl = 0.0, batch_ce = 0.0;
      std::fill(gz_ce.begin(), gz_ce.end(), 0.0f);
      if (use_protos) std::fill(g_bank.v.begin(), g_bank.v.end(), 0.0f);

      for (std::size_t i = 0; i < batch; ++i) {
        const float* xi = x.data() + i * s2;
        const float* xh = xhat.data() + i * s2;
        float* gx = gxhat.data() + i * s2;
        double d_acc = 0.0;
        for (std::size_t j = 0; j < s2; ++j) {
          const float diff = xh[j] - xi[j];
          d_acc += static_cast<double>(diff) * static_cast<double>(diff);
          gx[j] = recon_grad_scale * diff;
        }
        batch_recon += d_acc / static_cast<double>(s2);

        const float* mi = mu.data() + i * l;
        const float* li = lv.data() + i * l;
        const float* si = sig.data() + i * l;
        double kl_acc = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
          const double ev = static_cast<double>(si[j]) * static_cast<double>(si[j]);
          kl_acc += ev + static_cast<double>(mi[j]) * static_cast<double>(mi[j]) - 1.0 -
                    static_cast<double>(li[j]);
        }
        batch_kl += 0.5 * kl_acc;

        if (use_protos) {
          const SliceRef& ref = dataset.refs[idx[i]];
          const float* cell =
              bank.at(static_cast<Orientation>(ref.orientation), ref.slice_index, 1);
          float* gcell =
              g_bank.data() + bank.cell_offset(static_cast<Orientation>(ref.orientation),
                                               ref.slice_index, 1);
          batch_ce += accumulate_cross_entropy_gradients(
              z.data() + i * l, l, cell, bank.n_classes, ref.label, cfg.temperature,
              gamma * inv_b, gz_ce.data() + i * l, gcell);
        }
      }

      const double batch_total = (batch_recon + static_cast<double>(beta) * batch_kl +
                                  static_cast<double>(gamma) * batch_ce) /
                                 static_cast<double>(batch);
      if (!std::isfinite(batch_total)) {
        raise(ErrorCode::Numeric, "train: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(bi + 1) +
                                      " — aborting (check lr/beta/gamma)");
      }
      sum_recon += batch_recon;
      sum_kl += batch_kl;
      sum_ce += batch_ce;

      // ---- backward ----
      dense_backward(model.dec_out, c5, gxhat.data(), ga2.data(), g_do_w, g_do_b);
      dense_backward(model.dec_hidden, c4, ga2.data(), gz.data(), g_dh_w, g_dh_b);
      // z receives gradient from two paths: the decoder and the prototype
      // cross-entropy.
      for (std::size_t i = 0; i < batch * l; ++i) gz[i] += gz_ce[i];

      // Reparameterization + KL gradients into (gmu, glv).
      const float beta_scale = beta * inv_b;
      for (std::size_t i = 0; i < batch * l; ++i) {
        const float gzi = gz[i];
        gmu[i] = gzi + beta_scale * mu[i];
        float glvi = gzi * eps[i] * 0.5f * sig[i] +
                     beta_scale * 0.5f * (sig[i] * sig[i] - 1.0f);
        glv[i] = logvar_in_range(lv_raw[i]) ? glvi : 0.0f;
      }
      dense_backward(model.mu_head, c2, gmu.data(), ga1.data(), g_mu_w, g_mu_b);
      dense_backward(model.logvar_head, c3, glv.data(), ga1b.data(), g_lv_w, g_lv_b);
      for (std::size_t i = 0; i < batch * h; ++i) ga1[i] += ga1b[i];
      // Gradient w.r.t. the raw input pixels is never needed.
      dense_backward(model.enc_hidden, c1, ga1.data(), nullptr, g_enc_w, g_enc_b);

      // ---- parameter update (fixed order) ----
      Tensor* grads[11] = {&g_enc_w, &g_enc_b, &g_mu_w, &g_mu_b, &g_lv_w, &g_lv_b,
                           &g_dh_w, &g_dh_b, &g_do_w, &g_do_b, &g_bank};
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        adam_step(opt[pi], *params[pi], *grads[pi]);
      }
      if (use_protos) floor_prototype_norms(bank);
    }

    const double denom = static_cast<double>(std::max<std::size_t>(batches * batch, 1));
    EpochStats stats;
    stats.recon = sum_recon / denom;
    stats.kl = sum_kl / denom;
    stats.ce = sum_ce / denom;
    stats.total = stats.recon + static_cast<double>(beta) * stats.kl +
                  static_cast<double>(gamma) * stats.ce;
    curve.push_back(stats);
    if (cfg.progress) cfg.progress(epoch, stats);
  }
  return curve;
}

}  // namespace icbir
