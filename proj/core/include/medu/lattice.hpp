#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "medu/rng.hpp"

namespace medu {

enum class LatticeKind : std::uint8_t { Scalar = 0, Hexagonal = 1 };

/// Truncated lattice codebook: the points G*z (integer z) with ||G*z|| < radius,
/// enumerated in canonical order (ascending norm, then lexicographic), so
/// index 0 is the origin and the set is closed under negation.
struct Lattice {
  LatticeKind kind = LatticeKind::Scalar;
  int dim = 1;          // L
  double step = 0.0;    // generator scale
  double radius = 0.0;  // truncation radius
  // Generator, column-major; scalar lattices use gen[0] only.
  std::array<double, 4> gen{};
  std::vector<std::array<double, 2>> points;
  double covering_radius = 0.0;  // circumradius of the basic cell
  double second_moment = 0.0;    // E||d||^2, d uniform over the basic cell
  unsigned index_bits = 0;       // ceil(log2 |points|)
};

/// Scalar: points k*step with |k*step| < radius, cell [-step/2, step/2).
/// Hexagonal: generator columns step*(1,0) and step*(1/2, sqrt(3)/2); points
/// enumerated by brute force over the integer box bounded by
/// ceil(radius / sigma_min(G)). The hexagonal second moment is a fixed-seed
/// Monte Carlo estimate over the basic cell.
Lattice build_lattice(LatticeKind kind, double step, double radius);

struct NearestResult {
  std::uint32_t index = 0;
  bool overload = false;  // the untruncated round fell outside the codebook
};

/// Exhaustive argmin over the codebook, scanned in canonical order so exact
/// distance ties resolve to the smallest index.
NearestResult nearest_point(const Lattice& lat, std::span<const double> x);

/// Nearest point of the *untruncated* lattice (integer coordinates).
std::array<double, 2> untruncated_nearest(const Lattice& lat,
                                          std::span<const double> x);

/// Uniform draw over the basic cell (Voronoi region of the origin).
/// Scalar: step * (u - 1/2). Hexagonal: rejection sampling from the bounding
/// box, accepted when the origin is the nearest untruncated lattice point.
std::array<double, 2> sample_dither(const Lattice& lat, RngStream& stream);

/// Dithered encode: nearest codebook point of x + d.
NearestResult sdq_encode(const Lattice& lat, std::span<const double> x,
                         std::span<const double> d);

/// Subtractive decode: points[index] - d. Throws DecodeError for an
/// out-of-range index.
void sdq_decode(const Lattice& lat, std::uint32_t index,
                std::span<const double> d, std::span<double> out);

struct MomentEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Second moment of the basic cell: exact step^2/12 for scalar lattices,
/// Monte Carlo mean of ||d||^2 (with standard error) for hexagonal ones.
MomentEstimate cell_second_moment(const Lattice& lat, std::size_t mc_samples);

}  // namespace medu
