#include "medu/dataset.hpp"

#include <cmath>
#include <stdexcept>

namespace medu {

Dataset make_blobs(int classes, int dim, int per_class, double center_scale,
                   double noise_sigma, std::uint64_t seed) {
  if (classes < 2 || dim < 1 || per_class < 1) {
    throw std::invalid_argument("make_blobs: bad shape");
  }
  RngStream stream = derive_stream(seed, StreamTag::Dataset);

  // Cluster centers on a sphere of radius center_scale.
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (auto& v : c) {
      v = stream.gaussian();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (auto& v : c) v = v / norm * center_scale;
  }

  Dataset data;
  data.feature_dim = dim;
  data.num_classes = classes;
  data.examples.reserve(static_cast<std::size_t>(classes) * per_class);
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) {
      LabeledExample ex;
      ex.label = k;
      ex.features.resize(static_cast<std::size_t>(dim));
      for (int d = 0; d < dim; ++d) {
        ex.features[static_cast<std::size_t>(d)] =
            centers[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] +
            noise_sigma * stream.gaussian();
      }
      data.examples.push_back(std::move(ex));
    }
  }
  return data;
}

Dataset make_digits(int per_class, double noise_sigma, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("make_digits: per_class < 1");
  constexpr int kClasses = 10;
  constexpr int kSide = 8;
  constexpr int kDim = kSide * kSide;
  RngStream stream = derive_stream(seed, StreamTag::Dataset, {kClasses});

  // Smooth prototypes: a random 3x3 field bilinearly upsampled to 8x8.
  std::vector<std::vector<double>> protos(kClasses);
  for (auto& proto : protos) {
    double coarse[3][3];
    for (auto& row : coarse) {
      for (double& v : row) v = stream.uniform01();
    }
    proto.resize(kDim);
    for (int y = 0; y < kSide; ++y) {
      for (int x = 0; x < kSide; ++x) {
        const double fy = static_cast<double>(y) / (kSide - 1) * 2.0;
        const double fx = static_cast<double>(x) / (kSide - 1) * 2.0;
        const int y0 = std::min(1, static_cast<int>(fy));
        const int x0 = std::min(1, static_cast<int>(fx));
        const double wy = fy - y0;
        const double wx = fx - x0;
        proto[static_cast<std::size_t>(y * kSide + x)] =
            coarse[y0][x0] * (1 - wy) * (1 - wx) +
            coarse[y0 + 1][x0] * wy * (1 - wx) +
            coarse[y0][x0 + 1] * (1 - wy) * wx +
            coarse[y0 + 1][x0 + 1] * wy * wx;
      }
    }
  }

  Dataset data;
  data.feature_dim = kDim;
  data.num_classes = kClasses;
  data.examples.reserve(static_cast<std::size_t>(kClasses) * per_class);
  for (int k = 0; k < kClasses; ++k) {
    for (int i = 0; i < per_class; ++i) {
      LabeledExample ex;
      ex.label = k;
      ex.features.resize(kDim);
      for (int d = 0; d < kDim; ++d) {
        ex.features[static_cast<std::size_t>(d)] =
            protos[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] +
            noise_sigma * stream.gaussian();
      }
      data.examples.push_back(std::move(ex));
    }
  }
  return data;
}

TrainTestSplit split_stratified(const Dataset& data, double test_fraction,
                                RngStream& stream) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("test_fraction must be in [0, 1)");
  }
  TrainTestSplit out;
  out.train.feature_dim = out.test.feature_dim = data.feature_dim;
  out.train.num_classes = out.test.num_classes = data.num_classes;

  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    by_class[static_cast<std::size_t>(data.examples[i].label)].push_back(i);
  }
  for (auto& idx : by_class) {
    stream.shuffle(idx);
    const std::size_t n_test =
        static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_test ? out.test : out.train).examples.push_back(data.examples[idx[i]]);
    }
  }
  return out;
}

}  // namespace medu
