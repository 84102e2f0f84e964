#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "icbir/error.hpp"
#include "icbir/rng.hpp"
#include "icbir/volume.hpp"

using namespace icbir;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "icbir-unit-volume";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Volume random_volume(std::array<std::size_t, 3> dims, std::uint64_t seed) {
  Volume v;
  v.dims = dims;
  v.voxels.resize(dims[0] * dims[1] * dims[2]);
  Rng rng(seed);
  for (float& x : v.voxels) x = static_cast<float>(rng.next_uniform());
  v.spacing = {1.0f, 1.5f, 2.0f};
  v.id = "vol-" + std::to_string(seed);
  v.label = 2;
  return v;
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Little-endian u32 as 4 raw bytes.
std::string u32le(std::uint32_t v) {
  std::string s(4, '\0');
  std::memcpy(s.data(), &v, 4);
  return s;
}

}  // namespace

TEST_CASE("volume container: round-trip preserves every field bit-exactly") {
  const Volume v = random_volume({5, 6, 7}, 11);
  const fs::path path = test_dir() / "roundtrip.svol";
  write_volume(v, path.string());
  const Volume r = read_volume(path.string());
  CHECK(r.dims == v.dims);
  CHECK(r.spacing == v.spacing);
  CHECK(r.id == v.id);
  CHECK(r.label == v.label);
  CHECK(r.kind == v.kind);
  REQUIRE(r.voxels.size() == v.voxels.size());
  CHECK(std::memcmp(r.voxels.data(), v.voxels.data(),
                    v.voxels.size() * sizeof(float)) == 0);
}

TEST_CASE("volume container: derived-grid kind survives the round trip") {
  Volume v = random_volume({4, 4, 4}, 12);
  v.kind = "probmap";
  const fs::path path = test_dir() / "kind.svol";
  write_volume(v, path.string());
  CHECK(read_volume(path.string()).kind == "probmap");
}

TEST_CASE("volume container: truncated payload is a format error with a byte offset") {
  const std::string header =
      R"({"dims":[2,2,2],"dtype":"f32","spacing":[1.0,1.0,1.0],"id":"x","label":0})";
  std::string bytes = "SVOL" + u32le(static_cast<std::uint32_t>(header.size())) + header;
  bytes.append(7 * sizeof(float), '\0');  // header promises 8 floats
  const fs::path path = test_dir() / "truncated.svol";
  write_bytes(path, bytes);
  try {
    read_volume(path.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("volume container: wrong magic names the expected one") {
  const fs::path path = test_dir() / "badmagic.svol";
  write_bytes(path, "XXXX" + u32le(2) + "{}");
  try {
    read_volume(path.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
    CHECK(std::string(e.what()).find("SVOL") != std::string::npos);
  }
}

TEST_CASE("volume container: missing file is an io error") {
  CHECK_THROWS_AS(read_volume((test_dir() / "nope.svol").string()), Error);
}

TEST_CASE("resample: an already-canonical full-range volume passes through") {
  Volume v = random_volume({8, 8, 8}, 13);
  v.voxels[0] = 0.0f;  // pin the range to exactly [0, 1] so the min-max
  v.voxels[1] = 1.0f;  // normalization is the identity
  const Volume r = resample_to_canonical(v, 8);
  REQUIRE(r.voxels.size() == v.voxels.size());
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    CHECK(std::abs(r.voxels[i] - v.voxels[i]) < 1e-6f);
  }
}

TEST_CASE("resample: a constant volume maps to all zeros") {
  Volume v;
  v.dims = {4, 4, 4};
  v.voxels.assign(64, 0.7f);
  const Volume r = resample_to_canonical(v, 8);
  for (float x : r.voxels) CHECK(x == 0.0f);
}

TEST_CASE("resample: downsampling a linear ramp keeps it a linear ramp") {
  Volume v;
  v.dims = {8, 8, 8};
  v.voxels.resize(512);
  for (std::size_t a = 0; a < 8; ++a) {
    for (std::size_t b = 0; b < 8; ++b) {
      for (std::size_t c = 0; c < 8; ++c) {
        v.at(a, b, c) = static_cast<float>(a) / 7.0f;
      }
    }
  }
  const Volume r = resample_to_canonical(v, 4);
  for (std::size_t a = 0; a < 4; ++a) {
    const float expected = static_cast<float>(a) / 3.0f;
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(r.at(a, b, c) - expected) < 1e-3f);
      }
    }
  }
}

TEST_CASE("resample: degenerate input dims are rejected") {
  Volume v;
  v.dims = {1, 4, 4};
  v.voxels.assign(16, 0.0f);
  CHECK_THROWS_AS(resample_to_canonical(v, 8), Error);
}

TEST_CASE("slicing: a volume encoding its axis-0 index slices as expected") {
  const std::size_t s = 8;
  Volume v;
  v.dims = {s, s, s};
  v.voxels.resize(s * s * s);
  for (std::size_t a = 0; a < s; ++a) {
    for (std::size_t b = 0; b < s; ++b) {
      for (std::size_t c = 0; c < s; ++c) {
        v.at(a, b, c) = static_cast<float>(a) / static_cast<float>(s - 1);
      }
    }
  }

  // Slice i along axis 0 is the constant (i-1)/(S-1).
  const std::vector<Tensor> axial = extract_slices(v, Orientation::Axial);
  REQUIRE(axial.size() == s);
  for (std::size_t i = 1; i <= s; ++i) {
    const float expected = static_cast<float>(i - 1) / static_cast<float>(s - 1);
    for (float x : axial[i - 1].v) CHECK(x == expected);
  }

  // The other two orientations see the encoded index as their in-plane row
  // (first remaining axis is axis 0 for both).
  for (Orientation o : {Orientation::Coronal, Orientation::Sagittal}) {
    const std::vector<Tensor> slices = extract_slices(v, o);
    REQUIRE(slices.size() == s);
    for (const Tensor& slice : slices) {
      for (std::size_t r = 0; r < s; ++r) {
        const float expected = static_cast<float>(r) / static_cast<float>(s - 1);
        for (std::size_t c = 0; c < s; ++c) CHECK(slice.v[r * s + c] == expected);
      }
    }
  }
}

TEST_CASE("slicing: stacking the slices of any orientation rebuilds the volume") {
  const Volume v = random_volume({6, 6, 6}, 14);
  for (Orientation o : kOrientations) {
    const std::vector<Tensor> slices = extract_slices(v, o);
    Volume rebuilt = v;
    std::fill(rebuilt.voxels.begin(), rebuilt.voxels.end(), -1.0f);
    const std::size_t s = 6;
    for (std::size_t i = 1; i <= s; ++i) {
      const Tensor& slice = slices[i - 1];
      for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c < s; ++c) {
          const float val = slice.v[r * s + c];
          switch (o) {
            case Orientation::Axial: rebuilt.at(i - 1, r, c) = val; break;
            case Orientation::Coronal: rebuilt.at(r, i - 1, c) = val; break;
            case Orientation::Sagittal: rebuilt.at(r, c, i - 1) = val; break;
          }
        }
      }
    }
    CHECK(std::memcmp(rebuilt.voxels.data(), v.voxels.data(),
                      v.voxels.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("slicing: n_sections follows the orientation axis") {
  Volume v;
  v.dims = {4, 5, 6};
  v.voxels.assign(120, 0.0f);
  CHECK(n_sections(v, Orientation::Axial) == 4);
  CHECK(n_sections(v, Orientation::Coronal) == 5);
  CHECK(n_sections(v, Orientation::Sagittal) == 6);
}

TEST_CASE("phantom: a centered noiseless phantom is orientation-symmetric") {
  PhantomSpec spec;
  spec.seed = 1;
  spec.class_id = 2;
  spec.noise_sigma = 0.0f;
  spec.jitter = 0.0f;
  spec.grid = 32;
  const Phantom p = generate_phantom(spec);
  const std::vector<Tensor> ax = extract_slices(p.volume, Orientation::Axial);
  const std::vector<Tensor> co = extract_slices(p.volume, Orientation::Coronal);
  const std::vector<Tensor> sa = extract_slices(p.volume, Orientation::Sagittal);
  for (std::size_t i = 0; i < ax.size(); ++i) {
    CHECK(ax[i].v == co[i].v);
    CHECK(ax[i].v == sa[i].v);
  }
}

TEST_CASE("phantom: identical specs give bit-identical volumes and masks") {
  PhantomSpec spec;
  spec.seed = 99;
  spec.class_id = 2;
  spec.noise_sigma = 0.05f;
  spec.jitter = 2.0f;
  spec.grid = 24;
  const Phantom a = generate_phantom(spec);
  const Phantom b = generate_phantom(spec);
  CHECK(a.volume.voxels == b.volume.voxels);
  CHECK(a.mask.inside == b.mask.inside);
}

TEST_CASE("phantom: the two classes differ exactly on the ground-truth mask") {
  PhantomSpec spec;
  spec.seed = 5;
  spec.noise_sigma = 0.0f;
  spec.jitter = 0.0f;
  spec.grid = 32;
  spec.class_id = 1;
  const Phantom normal = generate_phantom(spec);
  spec.class_id = 2;
  const Phantom anomalous = generate_phantom(spec);
  REQUIRE(normal.volume.voxels.size() == anomalous.volume.voxels.size());
  CHECK(normal.mask.inside == anomalous.mask.inside);
  for (std::size_t i = 0; i < normal.volume.voxels.size(); ++i) {
    const bool differs = normal.volume.voxels[i] != anomalous.volume.voxels[i];
    CHECK(differs == (normal.mask.inside[i] != 0));
  }
}

TEST_CASE("phantom: mask voxel count matches brute-force sphere membership") {
  PhantomSpec spec;
  spec.seed = 3;
  spec.class_id = 2;
  spec.noise_sigma = 0.0f;
  spec.jitter = 0.0f;
  spec.anomaly_scale = 1.5f;
  spec.grid = 64;
  const Phantom p = generate_phantom(spec);

  // Independent enumeration: inside the enlarged inner sphere but outside the
  // normal-sized one, both centered at the grid midpoint.
  const double center = (64.0 - 1.0) / 2.0;
  const double r_inner = 0.08 * 64.0;
  const double r_anom = r_inner * 1.5;
  auto inside = [&](std::size_t a, std::size_t b, std::size_t c, double r) {
    const double da = (static_cast<double>(a) - center) / r;
    const double db = (static_cast<double>(b) - center) / r;
    const double dc = (static_cast<double>(c) - center) / r;
    return da * da + db * db + dc * dc <= 1.0;
  };
  std::size_t expected = 0;
  for (std::size_t a = 0; a < 64; ++a) {
    for (std::size_t b = 0; b < 64; ++b) {
      for (std::size_t c = 0; c < 64; ++c) {
        if (inside(a, b, c, r_anom) && !inside(a, b, c, r_inner)) ++expected;
      }
    }
  }
  CHECK(expected > 0);
  CHECK(p.mask.count() == expected);
}

TEST_CASE("phantom: an anomaly larger than the outer shell is rejected") {
  PhantomSpec spec;
  spec.anomaly_scale = 6.0f;  // 0.48*S inner vs 0.42*S outer
  spec.class_id = 2;
  try {
    generate_phantom(spec);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("mask: bounding box spans exactly the marked voxels") {
  GroundTruthMask mask;
  mask.dims = {3, 3, 3};
  mask.inside.assign(27, 0);
  auto idx = [](std::size_t a, std::size_t b, std::size_t c) {
    return (a * 3 + b) * 3 + c;
  };
  mask.inside[idx(1, 1, 1)] = 1;
  mask.inside[idx(2, 1, 0)] = 1;
  std::array<std::size_t, 3> lo{}, hi{};
  mask.bounding_box(lo, hi);
  CHECK(lo == std::array<std::size_t, 3>{1, 1, 0});
  CHECK(hi == std::array<std::size_t, 3>{2, 1, 1});
  CHECK(mask.count() == 2);

  GroundTruthMask empty;
  empty.dims = {2, 2, 2};
  empty.inside.assign(8, 0);
  CHECK_THROWS_AS(empty.bounding_box(lo, hi), Error);
}

TEST_CASE("mask: volume bridge round-trips the flags") {
  PhantomSpec spec;
  spec.grid = 16;
  spec.class_id = 2;
  const Phantom p = generate_phantom(spec);
  const Volume v = mask_to_volume(p.mask, "m1");
  CHECK(v.kind == "mask");
  const GroundTruthMask back = mask_from_volume(v);
  CHECK(back.dims == p.mask.dims);
  CHECK(back.inside == p.mask.inside);
}

TEST_CASE("manifest: json-lines records round-trip including optional masks") {
  std::vector<ManifestRecord> records;
  records.push_back({"vols/a.svol", "a", 1, "train", ""});
  records.push_back({"vols/b.svol", "b", 2, "test", "masks/b.svol"});
  const fs::path path = test_dir() / "manifest.jsonl";
  write_manifest(records, path.string());
  const std::vector<ManifestRecord> back = read_manifest(path.string());
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].path == records[i].path);
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].label == records[i].label);
    CHECK(back[i].split == records[i].split);
    CHECK(back[i].mask_path == records[i].mask_path);
  }
}
