#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "icbir/error.hpp"

namespace icbir {

// Every pipeline tunable in one place.  Commands validate it up front and
// serialize it verbatim into their outputs so each artifact records the
// settings that produced it.
struct RunConfig {
  std::size_t s = 64;     // canonical cubic grid edge
  std::size_t h = 256;    // hidden width of encoder/decoder
  std::size_t l = 32;     // latent dimension
  float beta = 0.001f;    // KL weight; see the VaeConfig note on collapse
  float gamma = 1.0f;    // classification weight (0 disables prototypes)
  float lr = 1e-3f;
  std::size_t epochs = 20;
  std::size_t batch = 64;
  std::uint64_t seed = 1;
  std::size_t block_n = 8;  // slices per block
  std::size_t block_m = 4;  // block stride
  std::vector<float> xi{0.5f};  // vote threshold, shared or per class
  int r = 1;                    // orientations required for a volume label
  std::size_t k = 5;            // retrieval neighbors
  float highlight = 0.8f;       // probability-map highlight threshold
  float temperature = 1.0f;     // softmax temperature at inference
  int normal_class = 1;
  std::vector<std::string> class_names{"normal", "anomalous"};
  int threads = 0;  // 0 = auto (ICBIR_THREADS, else hardware)

  std::size_t n_classes() const { return class_names.size(); }
  void validate() const;  // Config error on any out-of-range field

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

}  // namespace icbir
