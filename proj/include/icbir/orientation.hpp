#pragma once

#include <array>

#include "icbir/error.hpp"

namespace icbir {

// The three orthogonal slicing directions, mapped to volume axes 0/1/2.
enum class Orientation : int { Axial = 0, Coronal = 1, Sagittal = 2 };

inline constexpr std::array<Orientation, 3> kOrientations = {
    Orientation::Axial, Orientation::Coronal, Orientation::Sagittal};

inline constexpr int axis_of(Orientation o) { return static_cast<int>(o); }

inline const char* to_string(Orientation o) {
  switch (o) {
    case Orientation::Axial: return "axial";
    case Orientation::Coronal: return "coronal";
    case Orientation::Sagittal: return "sagittal";
  }
  return "?";
}

inline Orientation orientation_from_string(const std::string& s) {
  if (s == "axial") return Orientation::Axial;
  if (s == "coronal") return Orientation::Coronal;
  if (s == "sagittal") return Orientation::Sagittal;
  raise(ErrorCode::Parameter, "unknown orientation '" + s + "' (want axial|coronal|sagittal)");
}

}  // namespace icbir
