#include "icbir/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace icbir {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

std::uint64_t fnv1a64(const void* data, std::size_t bytes) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t hash = 14695981039346656037ull;
  for (std::size_t i = 0; i < bytes; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

std::string fingerprint_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return std::string(buf);
}

namespace {

constexpr std::uint32_t kVersion = 1;

[[noreturn]] void format_error(const std::string& path, std::size_t offset,
                               const std::string& what) {
  raise(ErrorCode::Format,
        "'" + path + "' at byte " + std::to_string(offset) + ": " + what);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

// Gathers the payload tensors in checkpoint order: the ten model parameters,
// then the prototype bank.
std::vector<const Tensor*> payload_tensors(const Checkpoint& c) {
  std::vector<const Tensor*> tensors = c.model.parameters();
  tensors.push_back(&c.bank.protos);
  return tensors;
}

std::vector<std::string> payload_names() {
  std::vector<std::string> names = VaeModel::parameter_names();
  names.push_back("prototype_bank");
  return names;
}

}  // namespace

void write_checkpoint(Checkpoint& checkpoint, const std::string& path) {
  const std::vector<const Tensor*> tensors = payload_tensors(checkpoint);
  const std::vector<std::string> names = payload_names();

  std::vector<float> payload;
  std::size_t total = 0;
  for (const Tensor* t : tensors) total += t->size();
  payload.reserve(total);
  for (const Tensor* t : tensors) {
    payload.insert(payload.end(), t->v.begin(), t->v.end());
  }
  checkpoint.fingerprint =
      fingerprint_hex(fnv1a64(payload.data(), payload.size() * sizeof(float)));

  json tensor_table = json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    tensor_table.push_back({{"name", names[i]}, {"shape", tensors[i]->shape}});
  }
  json meta;
  meta["arch"] = {{"s", checkpoint.model.cfg.s},
                  {"h", checkpoint.model.cfg.h},
                  {"l", checkpoint.model.cfg.l},
                  {"beta", checkpoint.model.cfg.beta},
                  {"gamma", checkpoint.model.cfg.gamma}};
  meta["seed"] = checkpoint.config.seed;
  meta["class_names"] = checkpoint.bank.class_names;
  meta["bank"] = {{"n_section", checkpoint.bank.n_section},
                  {"n_classes", checkpoint.bank.n_classes},
                  {"latent", checkpoint.bank.latent}};
  meta["tensors"] = std::move(tensor_table);
  meta["run_config"] = json::parse(checkpoint.config.to_json());
  json curve = json::array();
  for (const EpochStats& e : checkpoint.loss_curve) {
    curve.push_back(
        {{"recon", e.recon}, {"kl", e.kl}, {"ce", e.ce}, {"total", e.total}});
  }
  meta["loss_curve"] = std::move(curve);
  meta["fingerprint"] = checkpoint.fingerprint;

  const std::string meta_text = meta.dump();
  if (meta_text.size() > 0xFFFFFFFFull) {
    raise(ErrorCode::Format, "checkpoint metadata too large");
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::Io, "cannot create checkpoint '" + path + "'");
  out.write("ICBS", 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(meta_text.size()));
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) raise(ErrorCode::Io, "short write to checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4)) format_error(path, 0, "truncated magic");
  if (std::memcmp(magic, "ICBS", 4) != 0) {
    format_error(path, 0, "bad magic (expected \"ICBS\")");
  }
  std::uint32_t version = 0, json_len = 0;
  if (!in.read(reinterpret_cast<char*>(&version), 4)) {
    format_error(path, 4, "truncated version");
  }
  if (version != kVersion) {
    format_error(path, 4, "unsupported version " + std::to_string(version));
  }
  if (!in.read(reinterpret_cast<char*>(&json_len), 4)) {
    format_error(path, 8, "truncated metadata length");
  }
  std::string meta_text(json_len, '\0');
  if (!in.read(meta_text.data(), json_len)) {
    format_error(path, 12, "truncated metadata");
  }
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    format_error(path, 12, std::string("invalid metadata JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    const json& arch = meta.at("arch");
    VaeConfig cfg;
    cfg.s = arch.at("s").get<std::size_t>();
    cfg.h = arch.at("h").get<std::size_t>();
    cfg.l = arch.at("l").get<std::size_t>();
    cfg.beta = arch.at("beta").get<float>();
    cfg.gamma = arch.at("gamma").get<float>();
    c.model.cfg = cfg;
    c.model.enc_hidden = DenseLayer::make(cfg.s * cfg.s, cfg.h, Activation::Relu);
    c.model.mu_head = DenseLayer::make(cfg.h, cfg.l, Activation::Identity);
    c.model.logvar_head = DenseLayer::make(cfg.h, cfg.l, Activation::Identity);
    c.model.dec_hidden = DenseLayer::make(cfg.l, cfg.h, Activation::Relu);
    c.model.dec_out = DenseLayer::make(cfg.h, cfg.s * cfg.s, Activation::Sigmoid);

    const json& bank = meta.at("bank");
    c.bank = PrototypeBank::make(
        bank.at("n_section").get<std::size_t>(), bank.at("n_classes").get<std::size_t>(),
        bank.at("latent").get<std::size_t>(),
        meta.at("class_names").get<std::vector<std::string>>());

    c.config = RunConfig::from_json(meta.at("run_config").dump());
    for (const json& e : meta.at("loss_curve")) {
      c.loss_curve.push_back({e.at("recon").get<double>(), e.at("kl").get<double>(),
                              e.at("ce").get<double>(), e.at("total").get<double>()});
    }

    // Check the declared tensor table against this build's layout before
    // touching the payload.
    const std::vector<std::string> names = payload_names();
    std::vector<Tensor*> tensors = c.model.parameters();
    tensors.push_back(&c.bank.protos);
    const json& table = meta.at("tensors");
    if (table.size() != tensors.size()) {
      format_error(path, 12, "tensor table has " + std::to_string(table.size()) +
                                 " entries, expected " + std::to_string(tensors.size()));
    }
    std::size_t payload_offset = 12 + meta_text.size();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const std::string name = table[i].at("name").get<std::string>();
      const std::vector<std::size_t> shape =
          table[i].at("shape").get<std::vector<std::size_t>>();
      if (name != names[i]) {
        format_error(path, 12, "tensor " + std::to_string(i) + " is '" + name +
                                   "', expected '" + names[i] + "'");
      }
      if (shape != tensors[i]->shape) {
        format_error(path, 12, "tensor '" + name + "' shape " + shape_string(shape) +
                                   " does not match declared architecture " +
                                   shape_string(tensors[i]->shape));
      }
    }

    std::size_t total = 0;
    for (const Tensor* t : tensors) total += t->size();
    std::vector<float> payload(total);
    if (!in.read(reinterpret_cast<char*>(payload.data()),
                 static_cast<std::streamsize>(total * sizeof(float)))) {
      format_error(path, payload_offset, "truncated tensor payload");
    }
    char extra;
    if (in.read(&extra, 1)) {
      format_error(path, payload_offset + total * sizeof(float),
                   "trailing bytes after tensor payload");
    }

    const std::string actual =
        fingerprint_hex(fnv1a64(payload.data(), total * sizeof(float)));
    const std::string declared = meta.at("fingerprint").get<std::string>();
    if (actual != declared) {
      format_error(path, payload_offset,
                   "payload fingerprint " + actual + " does not match declared " +
                       declared + " (corrupt or tampered checkpoint)");
    }
    c.fingerprint = actual;

    std::size_t cursor = 0;
    for (Tensor* t : tensors) {
      std::memcpy(t->data(), payload.data() + cursor, t->size() * sizeof(float));
      cursor += t->size();
    }
  } catch (const json::exception& e) {
    format_error(path, 12, std::string("missing or mistyped metadata field: ") +
                               e.what());
  }
  return c;
}

void require_fingerprint_match(const std::string& expected, const std::string& actual,
                               const std::string& artifact) {
  if (expected != actual) {
    raise(ErrorCode::State, artifact + " was built from checkpoint " + actual +
                                " but the loaded checkpoint is " + expected +
                                "; regenerate the artifact or load the matching "
                                "checkpoint");
  }
}

}  // namespace icbir
