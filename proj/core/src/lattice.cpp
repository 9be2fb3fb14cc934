#include "medu/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "medu/errors.hpp"

namespace medu {
namespace {

constexpr double kSqrt3 = 1.7320508075688772935274463;
// Fixed seed for the build-time second-moment estimate; the estimate is part
// of the lattice value and must be reproducible.
constexpr std::uint64_t kMomentSeed = 0x6d65647573646d6fULL;

double norm2(const std::array<double, 2>& p, int dim) {
  double s = p[0] * p[0];
  if (dim == 2) s += p[1] * p[1];
  return s;
}

std::array<double, 2> apply_gen(const Lattice& lat, double z0, double z1) {
  if (lat.dim == 1) return {lat.gen[0] * z0, 0.0};
  return {lat.gen[0] * z0 + lat.gen[2] * z1, lat.gen[1] * z0 + lat.gen[3] * z1};
}

unsigned bits_for(std::size_t count) {
  unsigned bits = 0;
  std::size_t capacity = 1;
  while (capacity < count) {
    capacity <<= 1;
    ++bits;
  }
  return bits == 0 ? 1 : bits;
}

}  // namespace

Lattice build_lattice(LatticeKind kind, double step, double radius) {
  if (!(step > 0.0)) throw std::invalid_argument("lattice step must be positive");
  if (!(radius > step)) {
    throw std::invalid_argument("truncation radius must exceed the step");
  }
  Lattice lat;
  lat.kind = kind;
  lat.step = step;
  lat.radius = radius;

  double sigma_min = step;
  if (kind == LatticeKind::Scalar) {
    lat.dim = 1;
    lat.gen = {step, 0.0, 0.0, 0.0};
    lat.covering_radius = step / 2.0;
    lat.second_moment = step * step / 12.0;
  } else {
    lat.dim = 2;
    // Columns step*(1, 0) and step*(1/2, sqrt(3)/2).
    lat.gen = {step, 0.0, step * 0.5, step * kSqrt3 / 2.0};
    // Voronoi cell is a regular hexagon with inradius step/2, so its
    // circumradius is step/sqrt(3).
    lat.covering_radius = step / kSqrt3;
    // Smallest singular value of the generator: step/sqrt(2).
    sigma_min = step / std::sqrt(2.0);
  }

  const long box = static_cast<long>(std::ceil(radius / sigma_min));
  const long z1_lo = lat.dim == 2 ? -box : 0;
  const long z1_hi = lat.dim == 2 ? box : 0;
  for (long z0 = -box; z0 <= box; ++z0) {
    for (long z1 = z1_lo; z1 <= z1_hi; ++z1) {
      const auto p = apply_gen(lat, static_cast<double>(z0), static_cast<double>(z1));
      if (std::sqrt(norm2(p, lat.dim)) < radius) lat.points.push_back(p);
    }
  }
  std::sort(lat.points.begin(), lat.points.end(),
            [&](const std::array<double, 2>& a, const std::array<double, 2>& b) {
              const double na = norm2(a, lat.dim);
              const double nb = norm2(b, lat.dim);
              if (na != nb) return na < nb;
              if (a[0] != b[0]) return a[0] < b[0];
              return a[1] < b[1];
            });
  lat.index_bits = bits_for(lat.points.size());

  if (kind == LatticeKind::Hexagonal) {
    // The cell scales linearly with the step, so E||d||^2 is the unit-cell
    // moment times step^2. Estimated once per process.
    static const double unit_moment = [] {
      Lattice unit;
      unit.kind = LatticeKind::Hexagonal;
      unit.dim = 2;
      unit.step = 1.0;
      unit.radius = 2.0;
      unit.gen = {1.0, 0.0, 0.5, kSqrt3 / 2.0};
      unit.covering_radius = 1.0 / kSqrt3;
      return cell_second_moment(unit, 200000).value;
    }();
    lat.second_moment = step * step * unit_moment;
  }
  return lat;
}

NearestResult nearest_point(const Lattice& lat, std::span<const double> x) {
  if (static_cast<int>(x.size()) != lat.dim) {
    throw std::invalid_argument("input dimension does not match the lattice");
  }
  NearestResult out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lat.points.size(); ++i) {
    double d = lat.points[i][0] - x[0];
    double dist = d * d;
    if (lat.dim == 2) {
      d = lat.points[i][1] - x[1];
      dist += d * d;
    }
    if (dist < best) {  // strict: exact ties keep the smaller canonical index
      best = dist;
      out.index = static_cast<std::uint32_t>(i);
    }
  }
  const auto unconstrained = untruncated_nearest(lat, x);
  out.overload = std::sqrt(norm2(unconstrained, lat.dim)) >= lat.radius;
  return out;
}

std::array<double, 2> untruncated_nearest(const Lattice& lat,
                                          std::span<const double> x) {
  if (lat.dim == 1) {
    const double k = std::floor(x[0] / lat.step + 0.5);
    return {k * lat.step, 0.0};
  }
  // Babai rounding plus a local search; exact for this generator.
  const double det = lat.gen[0] * lat.gen[3] - lat.gen[2] * lat.gen[1];
  const double c0 = (lat.gen[3] * x[0] - lat.gen[2] * x[1]) / det;
  const double c1 = (-lat.gen[1] * x[0] + lat.gen[0] * x[1]) / det;
  const long z0 = static_cast<long>(std::floor(c0 + 0.5));
  const long z1 = static_cast<long>(std::floor(c1 + 0.5));
  std::array<double, 2> best{};
  double best_dist = std::numeric_limits<double>::infinity();
  for (long d0 = -1; d0 <= 1; ++d0) {
    for (long d1 = -1; d1 <= 1; ++d1) {
      const auto p = apply_gen(lat, static_cast<double>(z0 + d0),
                               static_cast<double>(z1 + d1));
      const double dx = p[0] - x[0];
      const double dy = p[1] - x[1];
      const double dist = dx * dx + dy * dy;
      if (dist < best_dist) {
        best_dist = dist;
        best = p;
      }
    }
  }
  return best;
}

std::array<double, 2> sample_dither(const Lattice& lat, RngStream& stream) {
  if (lat.dim == 1) {
    return {lat.step * (stream.uniform01() - 0.5), 0.0};
  }
  // Rejection sampling from the cell's bounding square.
  const double r = lat.covering_radius;
  for (;;) {
    std::array<double, 2> d = {stream.uniform(-r, r), stream.uniform(-r, r)};
    const auto nearest = untruncated_nearest(lat, d);
    if (nearest[0] == 0.0 && nearest[1] == 0.0) return d;
  }
}

NearestResult sdq_encode(const Lattice& lat, std::span<const double> x,
                         std::span<const double> d) {
  std::array<double, 2> shifted = {x[0] + d[0], 0.0};
  if (lat.dim == 2) shifted[1] = x[1] + d[1];
  return nearest_point(lat, std::span<const double>(shifted.data(),
                                                    static_cast<std::size_t>(lat.dim)));
}

void sdq_decode(const Lattice& lat, std::uint32_t index,
                std::span<const double> d, std::span<double> out) {
  if (index >= lat.points.size()) {
    throw DecodeError("point index " + std::to_string(index) +
                      " out of range (codebook has " +
                      std::to_string(lat.points.size()) + " points)");
  }
  for (int i = 0; i < lat.dim; ++i) {
    out[static_cast<std::size_t>(i)] =
        lat.points[index][static_cast<std::size_t>(i)] - d[static_cast<std::size_t>(i)];
  }
}

MomentEstimate cell_second_moment(const Lattice& lat, std::size_t mc_samples) {
  if (lat.kind == LatticeKind::Scalar) {
    return {lat.step * lat.step / 12.0, 0.0};
  }
  if (mc_samples < 10000) {
    throw std::invalid_argument("need at least 1e4 samples for the hexagonal cell");
  }
  RngStream stream(kMomentSeed, {static_cast<std::uint64_t>(mc_samples)});
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < mc_samples; ++i) {
    const auto d = sample_dither(lat, stream);
    const double v = d[0] * d[0] + d[1] * d[1];
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(mc_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, sum_sq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace medu
