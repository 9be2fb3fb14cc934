#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "medu/rng.hpp"

namespace medu {

/// Flat vector of model weights or gradient entries, length M.
using ParamVector = std::vector<double>;

enum class ModelKind { Linear, Logistic, Mlp };
enum class LossKind { SquaredError, CrossEntropy };

/// Small differentiable model family: linear scores, softmax classifier, or
/// ReLU MLP. `layers` lists widths input-first, e.g. {4, 8, 2} is a one
/// hidden layer MLP. Parameters are laid out layer by layer, each layer as a
/// row-major (out x in) weight block followed by `out` biases when
/// `with_bias` is set.
struct ModelSpec {
  ModelKind kind = ModelKind::Logistic;
  std::vector<int> layers;
  LossKind loss = LossKind::CrossEntropy;
  bool with_bias = true;
};

struct LabeledExample {
  std::vector<double> features;
  int label = 0;
};

void validate_spec(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);

/// Deterministic symmetric initializer: every entry of a layer is uniform on
/// [-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn from stream (seed, Init).
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean loss over the batch and the gradient of that mean. Batch entries are
/// accumulated in index-ascending order.
LossGrad loss_and_gradient(const ModelSpec& spec, const ParamVector& params,
                           std::span<const LabeledExample> batch);

/// Central-difference gradient, one coordinate at a time. Test oracle.
ParamVector finite_diff_gradient(const ModelSpec& spec,
                                 const ParamVector& params,
                                 std::span<const LabeledExample> batch,
                                 double epsilon);

/// Argmax class of the model output; ties resolve to the lowest class index.
int predict_class(const ModelSpec& spec, const ParamVector& params,
                  std::span<const double> features);

struct LocalUpdate {
  ParamVector new_params;
  ParamVector effective_gradient;  // (params - new_params) / eta
};

/// Multi-epoch local SGD. Returns the updated weights together with the
/// effective gradient g = (w - w_new)/eta; `new_params` is recomputed as
/// w - eta*g so the identity holds bit-exactly for the returned pair. With
/// epochs=1 and batch_size >= |client_data| this is one full-batch step.
LocalUpdate local_update(const ModelSpec& spec, const ParamVector& params,
                         std::span<const LabeledExample> client_data,
                         double eta, int epochs, int batch_size,
                         RngStream& stream);

}  // namespace medu
