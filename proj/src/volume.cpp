#include "icbir/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "icbir/rng.hpp"

namespace icbir {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "SVOL/ICBS/ICBX writers assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'V', 'O', 'L'};

[[noreturn]] void format_error(const std::string& path, std::size_t offset,
                               const std::string& what) {
  raise(ErrorCode::Format,
        path + ": " + what + " (byte offset " + std::to_string(offset) + ")");
}

}  // namespace

Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::Io, "cannot open volume file '" + path + "'");

  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    format_error(path, 0, "bad magic, expected \"SVOL\"");
  }
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 4);
  if (!in) format_error(path, 4, "truncated header-length field");

  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (!in) format_error(path, 8, "truncated JSON header");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    format_error(path, 8, std::string("unparsable JSON header: ") + e.what());
  }

  Volume volume;
  try {
    const auto& dims = header.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
      format_error(path, 8, "header \"dims\" must be an array of 3 integers");
    }
    for (int i = 0; i < 3; ++i) {
      const std::int64_t d = dims[i].get<std::int64_t>();
      if (d <= 0) format_error(path, 8, "header dims must be positive");
      volume.dims[static_cast<std::size_t>(i)] = static_cast<std::size_t>(d);
    }
    if (header.at("dtype").get<std::string>() != "f32") {
      format_error(path, 8, "unsupported dtype, expected \"f32\"");
    }
    if (header.contains("spacing")) {
      const auto& spacing = header["spacing"];
      if (!spacing.is_array() || spacing.size() != 3) {
        format_error(path, 8, "header \"spacing\" must be an array of 3 floats");
      }
      for (int i = 0; i < 3; ++i) {
        volume.spacing[static_cast<std::size_t>(i)] = spacing[i].get<float>();
      }
    }
    if (header.contains("id")) volume.id = header["id"].get<std::string>();
    if (header.contains("label")) volume.label = header["label"].get<int>();
    if (header.contains("kind")) volume.kind = header["kind"].get<std::string>();
  } catch (const json::exception& e) {
    format_error(path, 8, std::string("malformed header field: ") + e.what());
  }

  const std::size_t payload_offset = 8 + header_len;
  const std::size_t expected = volume.voxel_count();
  volume.voxels.resize(expected);
  in.read(reinterpret_cast<char*>(volume.voxels.data()),
          static_cast<std::streamsize>(expected * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(float)) {
    format_error(path, payload_offset + static_cast<std::size_t>(std::max<std::streamsize>(in.gcount(), 0)),
                 "truncated voxel payload, expected " + std::to_string(expected) +
                     " float32 values");
  }
  // Trailing garbage would make round-trips ambiguous; reject it.
  char extra = 0;
  in.read(&extra, 1);
  if (in.gcount() != 0) {
    format_error(path, payload_offset + expected * sizeof(float),
                 "unexpected data after voxel payload");
  }
  return volume;
}

void write_volume(const Volume& volume, const std::string& path) {
  if (volume.voxels.size() != volume.voxel_count()) {
    raise(ErrorCode::Dimension, "write_volume: voxel count does not match dims");
  }
  json header;
  header["dims"] = {volume.dims[0], volume.dims[1], volume.dims[2]};
  header["dtype"] = "f32";
  header["spacing"] = {volume.spacing[0], volume.spacing[1], volume.spacing[2]};
  header["id"] = volume.id;
  header["label"] = volume.label;
  if (!volume.kind.empty()) header["kind"] = volume.kind;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::Io, "cannot create volume file '" + path + "'");
  out.write(kMagic, 4);
  const std::uint32_t header_len = static_cast<std::uint32_t>(text.size());
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(volume.voxels.data()),
            static_cast<std::streamsize>(volume.voxels.size() * sizeof(float)));
  if (!out) raise(ErrorCode::Io, "short write to '" + path + "'");
}

Volume resample_to_canonical(const Volume& volume, std::size_t s) {
  if (s < 2) raise(ErrorCode::Parameter, "canonical grid size must be >= 2");
  for (std::size_t d : volume.dims) {
    if (d < 2) raise(ErrorCode::Dimension, "resample: every input dim must be >= 2");
  }
  Volume out;
  out.dims = {s, s, s};
  out.voxels.resize(s * s * s);
  out.spacing = volume.spacing;
  out.id = volume.id;
  out.label = volume.label;
  out.kind = volume.kind;

  // Align-corners trilinear interpolation: output index o maps to input
  // coordinate o * (D-1) / (S-1), so the first and last planes coincide.
  const std::array<double, 3> step = {
      static_cast<double>(volume.dims[0] - 1) / static_cast<double>(s - 1),
      static_cast<double>(volume.dims[1] - 1) / static_cast<double>(s - 1),
      static_cast<double>(volume.dims[2] - 1) / static_cast<double>(s - 1)};

  auto sample_axis = [](double coord, std::size_t dim, std::size_t& i0,
                        std::size_t& i1, double& frac) {
    const double clamped = std::clamp(coord, 0.0, static_cast<double>(dim - 1));
    i0 = static_cast<std::size_t>(clamped);
    if (i0 >= dim - 1) i0 = dim - 2;
    i1 = i0 + 1;
    frac = clamped - static_cast<double>(i0);
  };

  for (std::size_t a = 0; a < s; ++a) {
    std::size_t a0, a1;
    double fa;
    sample_axis(static_cast<double>(a) * step[0], volume.dims[0], a0, a1, fa);
    for (std::size_t b = 0; b < s; ++b) {
      std::size_t b0, b1;
      double fb;
      sample_axis(static_cast<double>(b) * step[1], volume.dims[1], b0, b1, fb);
      for (std::size_t c = 0; c < s; ++c) {
        std::size_t c0, c1;
        double fc;
        sample_axis(static_cast<double>(c) * step[2], volume.dims[2], c0, c1, fc);
        const double v000 = volume.at(a0, b0, c0), v001 = volume.at(a0, b0, c1);
        const double v010 = volume.at(a0, b1, c0), v011 = volume.at(a0, b1, c1);
        const double v100 = volume.at(a1, b0, c0), v101 = volume.at(a1, b0, c1);
        const double v110 = volume.at(a1, b1, c0), v111 = volume.at(a1, b1, c1);
        const double v00 = v000 + (v001 - v000) * fc;
        const double v01 = v010 + (v011 - v010) * fc;
        const double v10 = v100 + (v101 - v100) * fc;
        const double v11 = v110 + (v111 - v110) * fc;
        const double v0 = v00 + (v01 - v00) * fb;
        const double v1 = v10 + (v11 - v10) * fb;
        out.at(a, b, c) = static_cast<float>(v0 + (v1 - v0) * fa);
      }
    }
  }

  // Min-max normalization; a constant volume carries no intensity signal and
  // maps to all zeros.
  float lo = out.voxels[0], hi = out.voxels[0];
  for (float v : out.voxels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(std::isfinite(lo) && std::isfinite(hi))) {
    raise(ErrorCode::Numeric, "resample: non-finite voxel encountered");
  }
  if (hi - lo <= 0.0f) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
  } else {
    const float inv = 1.0f / (hi - lo);
    for (float& v : out.voxels) v = (v - lo) * inv;
  }
  return out;
}

std::size_t n_sections(const Volume& volume, Orientation orientation) {
  return volume.dims[static_cast<std::size_t>(axis_of(orientation))];
}

void extract_slice(const Volume& volume, Orientation orientation,
                   std::size_t slice_index, float* out) {
  const std::size_t n = n_sections(volume, orientation);
  if (slice_index < 1 || slice_index > n) {
    raise(ErrorCode::Parameter, "slice index " + std::to_string(slice_index) +
                                    " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t p = slice_index - 1;
  const auto [d0, d1, d2] = volume.dims;
  switch (orientation) {
    case Orientation::Axial:  // plane (a1, a2), contiguous
      std::memcpy(out, volume.voxels.data() + p * d1 * d2, d1 * d2 * sizeof(float));
      break;
    case Orientation::Coronal:  // plane (a0, a2)
      for (std::size_t a = 0; a < d0; ++a) {
        std::memcpy(out + a * d2, volume.voxels.data() + (a * d1 + p) * d2,
                    d2 * sizeof(float));
      }
      break;
    case Orientation::Sagittal:  // plane (a0, a1)
      for (std::size_t a = 0; a < d0; ++a) {
        for (std::size_t b = 0; b < d1; ++b) {
          out[a * d1 + b] = volume.voxels[(a * d1 + b) * d2 + p];
        }
      }
      break;
  }
}

std::vector<Tensor> extract_slices(const Volume& volume, Orientation orientation) {
  const std::size_t n = n_sections(volume, orientation);
  const auto [d0, d1, d2] = volume.dims;
  std::size_t rows = 0, cols = 0;
  switch (orientation) {
    case Orientation::Axial: rows = d1; cols = d2; break;
    case Orientation::Coronal: rows = d0; cols = d2; break;
    case Orientation::Sagittal: rows = d0; cols = d1; break;
  }
  std::vector<Tensor> slices;
  slices.reserve(n);
  for (std::size_t i = 1; i <= n; ++i) {
    Tensor t = Tensor::zeros({rows, cols});
    extract_slice(volume, orientation, i, t.data());
    slices.push_back(std::move(t));
  }
  return slices;
}

std::size_t GroundTruthMask::count() const {
  std::size_t n = 0;
  for (std::uint8_t v : inside) n += v != 0;
  return n;
}

void GroundTruthMask::bounding_box(std::array<std::size_t, 3>& lo,
                                   std::array<std::size_t, 3>& hi) const {
  lo = {dims[0], dims[1], dims[2]};
  hi = {0, 0, 0};
  bool any = false;
  std::size_t idx = 0;
  for (std::size_t a = 0; a < dims[0]; ++a) {
    for (std::size_t b = 0; b < dims[1]; ++b) {
      for (std::size_t c = 0; c < dims[2]; ++c, ++idx) {
        if (!inside[idx]) continue;
        any = true;
        lo = {std::min(lo[0], a), std::min(lo[1], b), std::min(lo[2], c)};
        hi = {std::max(hi[0], a), std::max(hi[1], b), std::max(hi[2], c)};
      }
    }
  }
  if (!any) raise(ErrorCode::State, "bounding_box: mask is empty");
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const std::size_t s = spec.grid;
  if (s < 8) raise(ErrorCode::Config, "phantom grid must be >= 8");
  if (spec.class_id != 1 && spec.class_id != 2) {
    raise(ErrorCode::Config, "phantom class_id must be 1 or 2");
  }
  if (spec.noise_sigma < 0.0f) raise(ErrorCode::Config, "noise_sigma must be >= 0");
  if (spec.jitter < 0.0f) raise(ErrorCode::Config, "jitter must be >= 0");
  if (!(spec.anomaly_scale > 1.0f)) {
    raise(ErrorCode::Config, "anomaly_scale must be > 1");
  }
  const double sd = static_cast<double>(s);
  const double r_outer = 0.42 * sd;
  const double r_inner = 0.08 * sd;
  const double r_anom = r_inner * static_cast<double>(spec.anomaly_scale);
  if (r_anom >= r_outer) {
    raise(ErrorCode::Config, "anomalous inner structure would exceed the outer shell");
  }

  Rng rng(spec.seed);
  // Center jitter: one uniform draw per axis in [-jitter, +jitter].
  std::array<double, 3> center;
  for (int axis = 0; axis < 3; ++axis) {
    const double u = 2.0 * rng.next_uniform() - 1.0;
    center[static_cast<std::size_t>(axis)] =
        (sd - 1.0) / 2.0 + static_cast<double>(spec.jitter) * u;
  }

  auto inside_sphere = [&center](std::size_t a, std::size_t b, std::size_t c,
                                 double radius) {
    const double da = (static_cast<double>(a) - center[0]) / radius;
    const double db = (static_cast<double>(b) - center[1]) / radius;
    const double dc = (static_cast<double>(c) - center[2]) / radius;
    return da * da + db * db + dc * dc <= 1.0;
  };

  Phantom phantom;
  Volume& volume = phantom.volume;
  volume.dims = {s, s, s};
  volume.voxels.assign(s * s * s, 0.0f);
  volume.label = spec.class_id;

  GroundTruthMask& mask = phantom.mask;
  mask.dims = volume.dims;
  mask.inside.assign(s * s * s, 0);

  const double r_class = spec.class_id == 1 ? r_inner : r_anom;
  std::size_t idx = 0;
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      for (std::size_t c = 0; c < s; ++c, ++idx) {
        float v = 0.0f;
        if (inside_sphere(a, b, c, r_outer)) {
          v = inside_sphere(a, b, c, r_class) ? 0.1f : 0.8f;
        }
        volume.voxels[idx] = v;
        // The mask is where the two class templates disagree: inside the
        // enlarged structure but outside the normal-sized one.
        if (inside_sphere(a, b, c, r_anom) && !inside_sphere(a, b, c, r_inner)) {
          mask.inside[idx] = 1;
        }
      }
    }
  }

  if (spec.noise_sigma > 0.0f) {
    // Raster-order draws keep the noise field a pure function of the seed.
    const double sigma = static_cast<double>(spec.noise_sigma);
    for (float& v : volume.voxels) {
      const double noisy = static_cast<double>(v) + sigma * rng.next_normal();
      v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
  }
  return phantom;
}

Volume mask_to_volume(const GroundTruthMask& mask, const std::string& id) {
  Volume v;
  v.dims = mask.dims;
  v.voxels.resize(mask.inside.size());
  for (std::size_t i = 0; i < mask.inside.size(); ++i) {
    v.voxels[i] = mask.inside[i] ? 1.0f : 0.0f;
  }
  v.id = id;
  v.kind = "mask";
  return v;
}

GroundTruthMask mask_from_volume(const Volume& volume) {
  if (volume.kind != "mask") {
    raise(ErrorCode::Format, "volume '" + volume.id + "' is not a mask (kind=\"" +
                                 volume.kind + "\")");
  }
  GroundTruthMask mask;
  mask.dims = volume.dims;
  mask.inside.resize(volume.voxels.size());
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    mask.inside[i] = volume.voxels[i] > 0.5f ? 1 : 0;
  }
  return mask;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::Io, "cannot open manifest '" + path + "'");
  std::vector<ManifestRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      ManifestRecord rec;
      rec.path = j.at("path").get<std::string>();
      rec.id = j.at("id").get<std::string>();
      rec.label = j.at("label").get<int>();
      rec.split = j.at("split").get<std::string>();
      if (j.contains("mask")) rec.mask_path = j["mask"].get<std::string>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      raise(ErrorCode::Format, path + ":" + std::to_string(line_no) +
                                   ": bad manifest record: " + e.what());
    }
  }
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::Io, "cannot create manifest '" + path + "'");
  for (const ManifestRecord& rec : records) {
    json j;
    j["path"] = rec.path;
    j["id"] = rec.id;
    j["label"] = rec.label;
    j["split"] = rec.split;
    if (!rec.mask_path.empty()) j["mask"] = rec.mask_path;
    out << j.dump() << "\n";
  }
  if (!out) raise(ErrorCode::Io, "short write to manifest '" + path + "'");
}

}  // namespace icbir
