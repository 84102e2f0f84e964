#include "icbir/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "icbir/parallel.hpp"

namespace icbir {

using nlohmann::json;

void BlockParams::validate(std::size_t n_section) const {
  if (n == 0 || m == 0) raise(ErrorCode::Parameter, "block n and m must be >= 1");
  if (n > n_section) {
    raise(ErrorCode::Parameter, "block size n=" + std::to_string(n) +
                                    " exceeds section count " +
                                    std::to_string(n_section));
  }
}

std::size_t BlockParams::block_count(std::size_t n_section) const {
  validate(n_section);
  return (n_section - n) / m + 1;
}

std::pair<std::size_t, std::size_t> BlockParams::slice_range(std::size_t j) const {
  const std::size_t first = (j - 1) * m + 1;
  return {first, first + n - 1};
}

VolumeCodes encode_volume_codes(const VaeModel& model, const Volume& volume) {
  if (!volume.is_cubic() || volume.dims[0] != model.cfg.s) {
    raise(ErrorCode::Dimension, "encode_volume_codes: volume '" + volume.id +
                                    "' is not on the model's canonical grid");
  }
  const std::size_t s = model.cfg.s;
  const std::size_t l = model.cfg.l;
  VolumeCodes codes;
  codes.n_section = s;
  codes.latent = l;
  std::vector<float> planes(std::min<std::size_t>(64, s) * s * s);
  std::vector<float> lv(std::min<std::size_t>(64, s) * l);
  for (Orientation orientation : kOrientations) {
    std::vector<float>& out = codes.z[static_cast<std::size_t>(axis_of(orientation))];
    out.resize(s * l);
    // Fixed batching (64 slices) keeps the kernel call shapes, and therefore
    // the produced bits, independent of the caller.
    for (std::size_t begin = 0; begin < s; begin += 64) {
      const std::size_t batch = std::min<std::size_t>(64, s - begin);
      for (std::size_t i = 0; i < batch; ++i) {
        extract_slice(volume, orientation, begin + i + 1, planes.data() + i * s * s);
      }
      encode_batch(model, planes.data(), batch, out.data() + begin * l, lv.data());
    }
  }
  return codes;
}

BlockCodes build_blocks(const float* codes, std::size_t n_slices, std::size_t latent,
                        BlockParams params) {
  const std::size_t j_count = params.block_count(n_slices);
  BlockCodes blocks;
  blocks.j_count = j_count;
  blocks.dim = params.n * latent;
  blocks.data.resize(j_count * blocks.dim);
  for (std::size_t j = 1; j <= j_count; ++j) {
    const auto [first, last] = params.slice_range(j);
    (void)last;
    // Slice codes are stored consecutively, so a block is one contiguous run.
    std::memcpy(blocks.data.data() + (j - 1) * blocks.dim,
                codes + (first - 1) * latent, blocks.dim * sizeof(float));
  }
  return blocks;
}

BlockCodes build_blocks(const std::vector<Tensor>& codes, BlockParams params) {
  if (codes.empty()) raise(ErrorCode::Input, "build_blocks: no slice codes");
  const std::size_t latent = codes.front().size();
  std::vector<float> flat(codes.size() * latent);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].size() != latent) {
      raise(ErrorCode::Dimension, "build_blocks: ragged slice codes");
    }
    std::memcpy(flat.data() + i * latent, codes[i].data(), latent * sizeof(float));
  }
  return build_blocks(flat.data(), codes.size(), latent, params);
}

std::vector<float> block_prototypes(const PrototypeBank& bank, Orientation orientation,
                                    std::size_t block_j, BlockParams params) {
  const std::size_t j_count = params.block_count(bank.n_section);
  if (block_j < 1 || block_j > j_count) {
    raise(ErrorCode::Parameter, "block index " + std::to_string(block_j) +
                                    " outside [1, " + std::to_string(j_count) + "]");
  }
  const auto [first, last] = params.slice_range(block_j);
  std::vector<float> protos(bank.n_classes * params.n * bank.latent);
  for (std::size_t k = 1; k <= bank.n_classes; ++k) {
    float* row = protos.data() + (k - 1) * params.n * bank.latent;
    for (std::size_t s = first; s <= last; ++s) {
      std::memcpy(row + (s - first) * bank.latent, bank.at(orientation, s, k),
                  bank.latent * sizeof(float));
    }
  }
  return protos;
}

ClassScores classify_block(const float* block, std::size_t dim, const float* prototypes,
                           std::size_t n_classes, float temperature) {
  return score_vectors(block, dim, prototypes, n_classes, temperature);
}

std::vector<int> block_predictions(const PrototypeBank& bank, const VolumeCodes& codes,
                                   Orientation orientation, BlockParams params,
                                   float temperature) {
  if (codes.latent != bank.latent || codes.n_section != bank.n_section) {
    raise(ErrorCode::Dimension, "block_predictions: codes do not match the bank");
  }
  const std::size_t j_count = params.block_count(codes.n_section);
  const std::size_t dim = params.n * codes.latent;
  const float* flat = codes.z[static_cast<std::size_t>(axis_of(orientation))].data();
  std::vector<int> predictions(j_count);
  for (std::size_t j = 1; j <= j_count; ++j) {
    const std::vector<float> protos = block_prototypes(bank, orientation, j, params);
    const auto [first, last] = params.slice_range(j);
    (void)last;
    const ClassScores scores = classify_block(flat + (first - 1) * codes.latent, dim,
                                              protos.data(), bank.n_classes, temperature);
    predictions[j - 1] = scores.s_star;
  }
  return predictions;
}

float DetectionConfig::xi_for(int class_index, std::size_t n_classes) const {
  if (xi.size() == 1) return xi[0];
  if (xi.size() != n_classes) {
    raise(ErrorCode::Config, "xi must have one value or one per class");
  }
  return xi[static_cast<std::size_t>(class_index - 1)];
}

void DetectionConfig::validate(std::size_t n_classes) const {
  if (xi.empty() || (xi.size() != 1 && xi.size() != n_classes)) {
    raise(ErrorCode::Config, "xi must have one value or one per class");
  }
  for (float v : xi) {
    if (!(v >= 0.0f && v <= 1.0f)) raise(ErrorCode::Config, "xi values must lie in [0,1]");
  }
  if (r < 1 || r > 3) raise(ErrorCode::Config, "r must be 1, 2, or 3");
  if (normal_class < 1 || static_cast<std::size_t>(normal_class) > n_classes) {
    raise(ErrorCode::Config, "normal class outside [1, K]");
  }
}

SectionDetection detect_section(const std::vector<int>& predictions,
                                std::size_t n_classes, const DetectionConfig& config) {
  if (predictions.empty()) raise(ErrorCode::Input, "detect_section: no blocks");
  config.validate(n_classes);
  SectionDetection out;
  out.blocks = predictions.size();
  out.votes.assign(n_classes, 0);
  for (int p : predictions) {
    if (p < 1 || static_cast<std::size_t>(p) > n_classes) {
      raise(ErrorCode::Input, "detect_section: prediction outside [1, K]");
    }
    out.votes[static_cast<std::size_t>(p - 1)] += 1;
  }
  out.fractions.resize(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    out.fractions[k] = static_cast<double>(out.votes[k]) /
                       static_cast<double>(out.blocks);
  }
  for (std::size_t k = 1; k <= n_classes; ++k) {
    if (static_cast<int>(k) == config.normal_class) continue;  // never "detected"
    const double xi = static_cast<double>(config.xi_for(static_cast<int>(k), n_classes));
    if (out.fractions[k - 1] > xi) out.detected.push_back(static_cast<int>(k));
  }
  return out;
}

int detect_volume(const std::array<SectionDetection, 3>& sections,
                  const DetectionConfig& config, std::size_t n_classes) {
  config.validate(n_classes);
  int best = 0;
  double best_fraction = -1.0;
  for (std::size_t k = 1; k <= n_classes; ++k) {
    const int cls = static_cast<int>(k);
    if (cls == config.normal_class) continue;
    int hits = 0;
    double total_fraction = 0.0;
    for (const SectionDetection& sec : sections) {
      if (std::find(sec.detected.begin(), sec.detected.end(), cls) != sec.detected.end()) {
        ++hits;
      }
      if (k - 1 < sec.fractions.size()) total_fraction += sec.fractions[k - 1];
    }
    if (hits < config.r) continue;
    // Largest summed vote fraction wins; strict > keeps the lowest index on ties.
    if (total_fraction > best_fraction) {
      best_fraction = total_fraction;
      best = cls;
    }
  }
  return best == 0 ? config.normal_class : best;
}

GalleryIndex index_gallery(const VaeModel& model, const std::vector<Volume>& volumes,
                           BlockParams params, const std::string& checkpoint_fingerprint,
                           int threads) {
  if (volumes.empty()) raise(ErrorCode::Input, "index_gallery: no volumes");
  params.validate(model.cfg.s);
  GalleryIndex index;
  index.params = params;
  index.latent = model.cfg.l;
  index.n_section = model.cfg.s;
  index.checkpoint_fingerprint = checkpoint_fingerprint;
  index.entries.resize(volumes.size());
  parallel_for(volumes.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const VolumeCodes codes = encode_volume_codes(model, volumes[i]);
      GalleryEntry& entry = index.entries[i];
      entry.id = volumes[i].id;
      entry.label = volumes[i].label;
      for (Orientation orientation : kOrientations) {
        const std::size_t o = static_cast<std::size_t>(axis_of(orientation));
        entry.codes[o] = build_blocks(codes.z[o].data(), codes.n_section, codes.latent,
                                      params);
      }
    }
  });
  return index;
}

namespace {

double block_cosine(const float* a, const float* b, std::size_t dim) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kNormFloor || nb < kNormFloor) {
    raise(ErrorCode::Degenerate, "block similarity: code norm below 1e-6");
  }
  return dot / (na * nb);
}

double entry_similarity(const GalleryEntry& entry, const VolumeCodes& codes,
                        BlockParams params) {
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t o = 0; o < 3; ++o) {
    const BlockCodes& blocks = entry.codes[o];
    const float* flat = codes.z[o].data();
    for (std::size_t j = 1; j <= blocks.j_count; ++j) {
      const auto [first, last] = params.slice_range(j);
      (void)last;
      acc += block_cosine(blocks.block(j), flat + (first - 1) * codes.latent,
                          blocks.dim);
      ++count;
    }
  }
  if (count == 0) raise(ErrorCode::State, "similarity: entry holds no blocks");
  return acc / static_cast<double>(count);
}

}  // namespace

QueryResult query(const GalleryIndex& index, const VolumeCodes& codes, std::size_t k,
                  int threads) {
  if (k == 0) raise(ErrorCode::Parameter, "query: k must be >= 1");
  if (index.entries.empty()) raise(ErrorCode::Input, "query: empty gallery");
  if (codes.latent != index.latent || codes.n_section != index.n_section) {
    raise(ErrorCode::Dimension, "query: codes do not match the index grid");
  }
  std::vector<double> scores(index.entries.size());
  parallel_for(index.entries.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      scores[i] = entry_similarity(index.entries[i], codes, index.params);
    }
  });
  std::vector<std::size_t> order(index.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.entries[a].id < index.entries[b].id;
  });
  QueryResult result;
  result.truncated = k > index.entries.size();
  const std::size_t take = std::min(k, index.entries.size());
  result.matches.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const GalleryEntry& e = index.entries[order[i]];
    result.matches.push_back({e.id, e.label, scores[order[i]]});
  }
  return result;
}

double pair_similarity(const GalleryIndex& index, const VolumeCodes& a,
                       const VolumeCodes& b) {
  GalleryEntry entry;
  for (std::size_t o = 0; o < 3; ++o) {
    entry.codes[o] = build_blocks(a.z[o].data(), a.n_section, a.latent, index.params);
  }
  return entry_similarity(entry, b, index.params);
}

void write_index(const GalleryIndex& index, const std::string& path) {
  json meta;
  meta["version"] = 1;
  meta["block_n"] = index.params.n;
  meta["block_m"] = index.params.m;
  meta["latent"] = index.latent;
  meta["n_section"] = index.n_section;
  meta["checkpoint_fingerprint"] = index.checkpoint_fingerprint;
  if (!index.run_config_json.empty()) {
    meta["run_config"] = json::parse(index.run_config_json);
  }
  json entries = json::array();
  std::size_t offset_bytes = 0;
  for (const GalleryEntry& entry : index.entries) {
    std::size_t floats = 0;
    for (const BlockCodes& codes : entry.codes) floats += codes.data.size();
    json e;
    e["id"] = entry.id;
    e["label"] = entry.label;
    e["offset"] = offset_bytes;  // bytes from payload start
    e["floats"] = floats;
    e["blocks"] = entry.codes[0].j_count;
    entries.push_back(std::move(e));
    offset_bytes += floats * sizeof(float);
  }
  meta["entries"] = std::move(entries);
  const std::string text = meta.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::Io, "cannot create index file '" + path + "'");
  out.write("ICBX", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint32_t json_len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&json_len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const GalleryEntry& entry : index.entries) {
    for (const BlockCodes& codes : entry.codes) {
      out.write(reinterpret_cast<const char*>(codes.data.data()),
                static_cast<std::streamsize>(codes.data.size() * sizeof(float)));
    }
  }
  if (!out) raise(ErrorCode::Io, "short write to index '" + path + "'");
}

GalleryIndex read_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "cannot open index file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ICBX", 4) != 0) {
    raise(ErrorCode::Format, path + ": bad magic, expected \"ICBX\" (byte offset 0)");
  }
  std::uint32_t version = 0, json_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&json_len), 4);
  if (!in) raise(ErrorCode::Format, path + ": truncated header (byte offset 4)");
  if (version != 1) {
    raise(ErrorCode::Format, path + ": unsupported index version " +
                                 std::to_string(version));
  }
  std::string text(json_len, '\0');
  in.read(text.data(), json_len);
  if (!in) raise(ErrorCode::Format, path + ": truncated JSON metadata (byte offset 12)");

  GalleryIndex index;
  try {
    const json meta = json::parse(text);
    index.params.n = meta.at("block_n").get<std::size_t>();
    index.params.m = meta.at("block_m").get<std::size_t>();
    index.latent = meta.at("latent").get<std::size_t>();
    index.n_section = meta.at("n_section").get<std::size_t>();
    index.checkpoint_fingerprint = meta.at("checkpoint_fingerprint").get<std::string>();
    if (meta.contains("run_config")) index.run_config_json = meta["run_config"].dump();
    const std::size_t j_count = index.params.block_count(index.n_section);
    const std::size_t dim = index.params.n * index.latent;
    for (const json& e : meta.at("entries")) {
      GalleryEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.label = e.at("label").get<int>();
      const std::size_t floats = e.at("floats").get<std::size_t>();
      if (floats != 3 * j_count * dim) {
        raise(ErrorCode::Format, path + ": entry '" + entry.id +
                                     "' has inconsistent code size");
      }
      for (std::size_t o = 0; o < 3; ++o) {
        entry.codes[o].j_count = j_count;
        entry.codes[o].dim = dim;
        entry.codes[o].data.resize(j_count * dim);
      }
      index.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    raise(ErrorCode::Format, path + ": malformed index metadata: " + e.what());
  }
  const std::size_t payload_offset = 12 + json_len;
  for (GalleryEntry& entry : index.entries) {
    for (BlockCodes& codes : entry.codes) {
      in.read(reinterpret_cast<char*>(codes.data.data()),
              static_cast<std::streamsize>(codes.data.size() * sizeof(float)));
    }
  }
  if (!in) {
    raise(ErrorCode::Format, path + ": truncated code payload (payload starts at byte " +
                                 std::to_string(payload_offset) + ")");
  }
  return index;
}

}  // namespace icbir
