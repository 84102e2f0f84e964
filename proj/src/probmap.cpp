#include "icbir/probmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace icbir {

using nlohmann::json;

std::vector<float> slice_probability_field(const PrototypeBank& bank,
                                           const VolumeCodes& codes,
                                           Orientation orientation, float temperature) {
  if (codes.latent != bank.latent || codes.n_section != bank.n_section) {
    raise(ErrorCode::Dimension, "probability field: codes do not match the bank");
  }
  const std::size_t s = codes.n_section;
  const std::size_t k = bank.n_classes;
  std::vector<float> field(k * s * s * s);
  const std::size_t plane = s * s;
  Tensor z = Tensor::zeros({bank.latent});
  for (std::size_t i = 1; i <= s; ++i) {
    std::memcpy(z.data(), codes.slice(orientation, i), bank.latent * sizeof(float));
    const ClassScores scores = score_slice(bank, z, orientation, i, temperature);
    // Broadcast p_i over the whole plane with index i-1 on this axis.
    for (std::size_t cls = 0; cls < k; ++cls) {
      const float p = scores.p[cls];
      float* base = field.data() + cls * s * plane;
      switch (orientation) {
        case Orientation::Axial:
          std::fill(base + (i - 1) * plane, base + i * plane, p);
          break;
        case Orientation::Coronal:
          for (std::size_t a = 0; a < s; ++a) {
            float* row = base + a * plane + (i - 1) * s;
            std::fill(row, row + s, p);
          }
          break;
        case Orientation::Sagittal:
          for (std::size_t a = 0; a < s; ++a) {
            for (std::size_t b = 0; b < s; ++b) {
              base[a * plane + b * s + (i - 1)] = p;
            }
          }
          break;
      }
    }
  }
  return field;
}

ProbabilityMap aggregate_probability_map(const std::vector<float>& axial,
                                         const std::vector<float>& coronal,
                                         const std::vector<float>& sagittal,
                                         std::size_t n_classes, std::size_t s,
                                         AggregateMode mode) {
  const std::size_t expected = n_classes * s * s * s;
  if (axial.size() != expected || coronal.size() != expected ||
      sagittal.size() != expected) {
    raise(ErrorCode::Dimension, "aggregate: field sizes disagree");
  }
  ProbabilityMap map;
  map.n_classes = n_classes;
  map.s = s;
  map.data.resize(expected);
  const std::size_t voxels = s * s * s;
  if (mode == AggregateMode::Mean) {
    for (std::size_t i = 0; i < expected; ++i) {
      map.data[i] = (axial[i] + coronal[i] + sagittal[i]) * (1.0f / 3.0f);
    }
  } else {
    // Geometric mean of three simplex points is not itself normalized, so
    // renormalize per voxel.
    for (std::size_t v = 0; v < voxels; ++v) {
      double sum = 0.0;
      for (std::size_t cls = 0; cls < n_classes; ++cls) {
        const std::size_t i = cls * voxels + v;
        const double g = std::cbrt(static_cast<double>(axial[i]) *
                                   static_cast<double>(coronal[i]) *
                                   static_cast<double>(sagittal[i]));
        map.data[i] = static_cast<float>(g);
        sum += g;
      }
      if (sum <= 0.0) {
        // All-zero product collapse; fall back to uniform.
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
          map.data[cls * voxels + v] = 1.0f / static_cast<float>(n_classes);
        }
      } else {
        for (std::size_t cls = 0; cls < n_classes; ++cls) {
          map.data[cls * voxels + v] =
              static_cast<float>(map.data[cls * voxels + v] / sum);
        }
      }
    }
  }
  return map;
}

ProbabilityMap probability_map_for(const VaeModel& model, const PrototypeBank& bank,
                                   const Volume& volume, float temperature,
                                   AggregateMode mode) {
  const VolumeCodes codes = encode_volume_codes(model, volume);
  const std::vector<float> axial =
      slice_probability_field(bank, codes, Orientation::Axial, temperature);
  const std::vector<float> coronal =
      slice_probability_field(bank, codes, Orientation::Coronal, temperature);
  const std::vector<float> sagittal =
      slice_probability_field(bank, codes, Orientation::Sagittal, temperature);
  ProbabilityMap map = aggregate_probability_map(axial, coronal, sagittal,
                                                 bank.n_classes, codes.n_section, mode);
  map.volume_id = volume.id;
  return map;
}

OverlayStats overlay_stats(const ProbabilityMap& map, int cls, float threshold) {
  if (cls < 1 || static_cast<std::size_t>(cls) > map.n_classes) {
    raise(ErrorCode::Parameter, "overlay: unknown class " + std::to_string(cls));
  }
  if (!(threshold >= 0.0f && threshold <= 1.0f)) {
    raise(ErrorCode::Parameter, "overlay: threshold must lie in [0,1]");
  }
  OverlayStats stats;
  const std::size_t s = map.s;
  double ca = 0.0, cb = 0.0, cc = 0.0;
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      for (std::size_t c = 0; c < s; ++c) {
        if (map.at(static_cast<std::size_t>(cls), a, b, c) >= threshold) {
          ++stats.highlighted;
          ca += static_cast<double>(a);
          cb += static_cast<double>(b);
          cc += static_cast<double>(c);
        }
      }
    }
  }
  if (stats.highlighted > 0) {
    const double n = static_cast<double>(stats.highlighted);
    stats.centroid = std::array<double, 3>{ca / n, cb / n, cc / n};
  }
  return stats;
}

OverlayStats export_overlay(const ProbabilityMap& map, const Volume& volume, int cls,
                            float threshold, const std::string& out_dir,
                            Orientation render, const std::string& provenance_json) {
  if (volume.dims != std::array<std::size_t, 3>{map.s, map.s, map.s}) {
    raise(ErrorCode::Dimension, "overlay: volume grid does not match the map");
  }
  OverlayStats stats = overlay_stats(map, cls, threshold);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) raise(ErrorCode::Io, "cannot create overlay directory '" + out_dir + "'");

  const std::size_t s = map.s;
  std::vector<unsigned char> rgb(s * s * 3);
  std::vector<float> gray(s * s), prob(s * s);
  for (std::size_t i = 1; i <= s; ++i) {
    extract_slice(volume, render, i, gray.data());
    // The map has the same layout as a volume per class; reuse the slicer.
    Volume prob_view;
    prob_view.dims = {s, s, s};
    prob_view.voxels.assign(
        map.data.begin() + (static_cast<std::size_t>(cls) - 1) * s * s * s,
        map.data.begin() + static_cast<std::size_t>(cls) * s * s * s);
    extract_slice(prob_view, render, i, prob.data());
    for (std::size_t p = 0; p < s * s; ++p) {
      const float g = std::clamp(gray[p], 0.0f, 1.0f);
      const unsigned char v = static_cast<unsigned char>(g * 255.0f + 0.5f);
      if (prob[p] >= threshold) {
        rgb[p * 3 + 0] = 255;
        rgb[p * 3 + 1] = static_cast<unsigned char>(v / 3);
        rgb[p * 3 + 2] = static_cast<unsigned char>(v / 3);
      } else {
        rgb[p * 3 + 0] = v;
        rgb[p * 3 + 1] = v;
        rgb[p * 3 + 2] = v;
      }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "%s_slice_%03zu.ppm", to_string(render), i);
    const std::string path = (fs::path(out_dir) / name).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::Io, "cannot create overlay image '" + path + "'");
    out << "P6\n" << s << " " << s << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()),
              static_cast<std::streamsize>(rgb.size()));
    if (!out) raise(ErrorCode::Io, "short write to overlay image '" + path + "'");
    stats.image_paths.push_back(path);
  }

  json sidecar;
  sidecar["volume_id"] = map.volume_id;
  sidecar["class"] = cls;
  sidecar["threshold"] = threshold;
  sidecar["highlighted_voxels"] = stats.highlighted;
  if (stats.centroid) {
    sidecar["centroid"] = {(*stats.centroid)[0], (*stats.centroid)[1],
                           (*stats.centroid)[2]};
  } else {
    sidecar["centroid"] = nullptr;
  }
  sidecar["render_orientation"] = to_string(render);
  if (!provenance_json.empty()) {
    sidecar["provenance"] = json::parse(provenance_json);
  }
  const std::string sidecar_path = (fs::path(out_dir) / "overlay.json").string();
  std::ofstream out(sidecar_path, std::ios::trunc);
  if (!out) raise(ErrorCode::Io, "cannot create overlay sidecar '" + sidecar_path + "'");
  out << sidecar.dump(2) << "\n";
  stats.sidecar_path = sidecar_path;
  return stats;
}

std::vector<Volume> map_to_volumes(const ProbabilityMap& map) {
  std::vector<Volume> volumes;
  const std::size_t voxels = map.s * map.s * map.s;
  for (std::size_t cls = 1; cls <= map.n_classes; ++cls) {
    Volume v;
    v.dims = {map.s, map.s, map.s};
    v.voxels.assign(map.data.begin() + (cls - 1) * voxels,
                    map.data.begin() + cls * voxels);
    v.id = map.volume_id + ":class" + std::to_string(cls);
    v.label = static_cast<int>(cls);
    v.kind = "probmap";
    volumes.push_back(std::move(v));
  }
  return volumes;
}

}  // namespace icbir
