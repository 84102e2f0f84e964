#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icbir/protohead.hpp"
#include "icbir/runconfig.hpp"
#include "icbir/vae.hpp"

namespace icbir {

// A trained model plus everything needed to reproduce or verify it: the
// prototype bank, the full run configuration, the per-epoch loss curve, and
// a fingerprint of the parameter payload.  Downstream artifacts (indexes,
// reports) embed the fingerprint so mixed-up artifact sets fail loudly.
struct Checkpoint {
  VaeModel model;
  PrototypeBank bank;
  RunConfig config;
  std::vector<EpochStats> loss_curve;
  std::string fingerprint;  // 16 hex digits, filled on write/read
};

// FNV-1a (64-bit) over a byte range; the checkpoint fingerprint hashes the
// concatenated little-endian f32 parameter payload.
std::uint64_t fnv1a64(const void* data, std::size_t bytes);
std::string fingerprint_hex(std::uint64_t value);

// File layout: magic "ICBS" | u32 version | u32 JSON length | JSON metadata
// (architecture, seed, class names, bank dims, tensor table, run config,
// loss curve, fingerprint) | all tensors as raw little-endian f32 in the
// declared order (model parameters, then the prototype bank).
void write_checkpoint(Checkpoint& checkpoint, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

// State error naming both fingerprints when they disagree (e.g. an index
// built from a different checkpoint).
void require_fingerprint_match(const std::string& expected, const std::string& actual,
                               const std::string& artifact);

}  // namespace icbir
