#pragma once

#include <cstdint>

#include "medu/model.hpp"
#include "medu/rng.hpp"

namespace medu {

struct Dataset {
  std::vector<LabeledExample> examples;
  int feature_dim = 0;
  int num_classes = 0;
};

/// Gaussian blobs: `classes` cluster centers drawn on a sphere of radius
/// `center_scale`, `per_class` points per cluster with isotropic noise.
Dataset make_blobs(int classes, int dim, int per_class, double center_scale,
                   double noise_sigma, std::uint64_t seed);

/// Procedural 8x8 ten-class image set: one smooth random prototype per class,
/// examples are the prototype plus pixel noise. A deterministic stand-in for
/// a small digit-recognition task.
Dataset make_digits(int per_class, double noise_sigma, std::uint64_t seed);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Class-stratified shuffled split.
TrainTestSplit split_stratified(const Dataset& data, double test_fraction,
                                RngStream& stream);

}  // namespace medu
