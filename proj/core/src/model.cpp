#include "medu/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace medu {
namespace {

struct LayerView {
  int in = 0;
  int out = 0;
  std::size_t w_off = 0;
  std::size_t b_off = 0;
};

std::vector<LayerView> layout(const ModelSpec& spec) {
  std::vector<LayerView> views;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    LayerView v;
    v.in = spec.layers[l];
    v.out = spec.layers[l + 1];
    v.w_off = off;
    off += static_cast<std::size_t>(v.in) * v.out;
    v.b_off = off;
    if (spec.with_bias) off += v.out;
    views.push_back(v);
  }
  return views;
}

// Pre-activations per layer; hidden layers apply ReLU before feeding forward.
void forward(const ModelSpec& spec, const ParamVector& params,
             const std::vector<LayerView>& views,
             std::span<const double> features,
             std::vector<std::vector<double>>& pre,
             std::vector<std::vector<double>>& act) {
  pre.resize(views.size());
  act.resize(views.size() + 1);
  act[0].assign(features.begin(), features.end());
  for (std::size_t l = 0; l < views.size(); ++l) {
    const LayerView& v = views[l];
    pre[l].assign(static_cast<std::size_t>(v.out), 0.0);
    for (int o = 0; o < v.out; ++o) {
      double z = spec.with_bias ? params[v.b_off + o] : 0.0;
      const double* w = params.data() + v.w_off + static_cast<std::size_t>(o) * v.in;
      const double* a = act[l].data();
      for (int i = 0; i < v.in; ++i) z += w[i] * a[i];
      pre[l][o] = z;
    }
    if (l + 1 < views.size()) {
      act[l + 1].resize(pre[l].size());
      for (std::size_t i = 0; i < pre[l].size(); ++i) {
        act[l + 1][i] = pre[l][i] > 0.0 ? pre[l][i] : 0.0;
      }
    }
  }
}

// Loss of one example and the gradient of the scores; output is the model's
// final pre-activation vector.
double head_loss(const ModelSpec& spec, const std::vector<double>& scores,
                 int label, std::vector<double>* dscores) {
  const int k = static_cast<int>(scores.size());
  if (spec.loss == LossKind::CrossEntropy) {
    double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double z : scores) sum += std::exp(z - mx);
    const double log_sum = std::log(sum) + mx;
    if (dscores) {
      dscores->resize(scores.size());
      for (int i = 0; i < k; ++i) {
        (*dscores)[i] = std::exp(scores[i] - log_sum) - (i == label ? 1.0 : 0.0);
      }
    }
    return log_sum - scores[static_cast<std::size_t>(label)];
  }
  // Squared error against the one-hot target, or against the raw label value
  // for single-output models.
  double loss = 0.0;
  if (dscores) dscores->resize(scores.size());
  for (int i = 0; i < k; ++i) {
    const double target = (k == 1) ? static_cast<double>(label)
                                   : (i == label ? 1.0 : 0.0);
    const double r = scores[i] - target;
    loss += 0.5 * r * r;
    if (dscores) (*dscores)[i] = r;
  }
  return loss;
}

void check_example(const ModelSpec& spec, const LabeledExample& ex) {
  const int want = spec.layers.front();
  if (static_cast<int>(ex.features.size()) != want) {
    throw std::invalid_argument(
        "feature dimension mismatch: model expects " + std::to_string(want) +
        ", example has " + std::to_string(ex.features.size()));
  }
  const int k = spec.layers.back();
  if (ex.label < 0 || (k > 1 && ex.label >= k)) {
    throw std::invalid_argument("label " + std::to_string(ex.label) +
                                " out of range for " + std::to_string(k) +
                                " outputs");
  }
}

LossGrad loss_and_gradient_ptrs(const ModelSpec& spec,
                                const ParamVector& params,
                                std::span<const LabeledExample* const> batch) {
  validate_spec(spec);
  if (batch.empty()) throw std::invalid_argument("empty batch");
  if (params.size() != param_count(spec)) {
    throw std::invalid_argument("parameter vector has wrong length");
  }
  const auto views = layout(spec);

  LossGrad out;
  out.grad.assign(params.size(), 0.0);
  std::vector<std::vector<double>> pre, act;
  std::vector<double> dz, da;

  for (const LabeledExample* ex : batch) {
    check_example(spec, *ex);
    forward(spec, params, views, ex->features, pre, act);
    out.loss += head_loss(spec, pre.back(), ex->label, &dz);
    for (std::size_t li = views.size(); li-- > 0;) {
      const LayerView& v = views[li];
      for (int o = 0; o < v.out; ++o) {
        const double g = dz[static_cast<std::size_t>(o)];
        double* dw = out.grad.data() + v.w_off + static_cast<std::size_t>(o) * v.in;
        const double* a = act[li].data();
        for (int i = 0; i < v.in; ++i) dw[i] += g * a[i];
        if (spec.with_bias) out.grad[v.b_off + o] += g;
      }
      if (li > 0) {
        da.assign(static_cast<std::size_t>(v.in), 0.0);
        for (int o = 0; o < v.out; ++o) {
          const double g = dz[static_cast<std::size_t>(o)];
          const double* w = params.data() + v.w_off + static_cast<std::size_t>(o) * v.in;
          for (int i = 0; i < v.in; ++i) da[static_cast<std::size_t>(i)] += w[i] * g;
        }
        // ReLU subgradient, zero at the kink.
        dz.resize(da.size());
        for (std::size_t i = 0; i < da.size(); ++i) {
          dz[i] = pre[li - 1][i] > 0.0 ? da[i] : 0.0;
        }
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
  if (spec.layers.size() < 2) {
    throw std::invalid_argument("model needs at least input and output widths");
  }
  for (int w : spec.layers) {
    if (w <= 0) throw std::invalid_argument("layer widths must be positive");
  }
  const bool has_hidden = spec.layers.size() > 2;
  if (spec.kind == ModelKind::Mlp && !has_hidden) {
    throw std::invalid_argument("mlp requires at least one hidden layer");
  }
  if (spec.kind != ModelKind::Mlp && has_hidden) {
    throw std::invalid_argument("linear/logistic models take no hidden layers");
  }
  if (spec.kind == ModelKind::Logistic && spec.loss != LossKind::CrossEntropy) {
    throw std::invalid_argument("logistic models use cross-entropy loss");
  }
  if (spec.loss == LossKind::CrossEntropy && spec.layers.back() < 2) {
    throw std::invalid_argument("cross-entropy needs at least two outputs");
  }
}

std::size_t param_count(const ModelSpec& spec) {
  validate_spec(spec);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    n += static_cast<std::size_t>(spec.layers[l]) * spec.layers[l + 1];
    if (spec.with_bias) n += static_cast<std::size_t>(spec.layers[l + 1]);
  }
  return n;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  RngStream stream = derive_stream(seed, StreamTag::Init);
  ParamVector params(param_count(spec));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < spec.layers.size(); ++l) {
    const int in = spec.layers[l];
    const int out = spec.layers[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const std::size_t n = static_cast<std::size_t>(in) * out +
                          (spec.with_bias ? static_cast<std::size_t>(out) : 0);
    for (std::size_t i = 0; i < n; ++i) params[off++] = stream.uniform(-bound, bound);
  }
  return params;
}

LossGrad loss_and_gradient(const ModelSpec& spec, const ParamVector& params,
                           std::span<const LabeledExample> batch) {
  std::vector<const LabeledExample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return loss_and_gradient_ptrs(spec, params, ptrs);
}

ParamVector finite_diff_gradient(const ModelSpec& spec,
                                 const ParamVector& params,
                                 std::span<const LabeledExample> batch,
                                 double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  ParamVector p = params;
  ParamVector grad(params.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + epsilon;
    const double up = loss_and_gradient(spec, p, batch).loss;
    p[i] = saved - epsilon;
    const double down = loss_and_gradient(spec, p, batch).loss;
    p[i] = saved;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

int predict_class(const ModelSpec& spec, const ParamVector& params,
                  std::span<const double> features) {
  validate_spec(spec);
  if (spec.layers.back() < 2) {
    throw std::invalid_argument("classification needs at least two outputs");
  }
  const auto views = layout(spec);
  std::vector<std::vector<double>> pre, act;
  forward(spec, params, views, features, pre, act);
  const auto& scores = pre.back();
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) best = i;
  }
  return best;
}

LocalUpdate local_update(const ModelSpec& spec, const ParamVector& params,
                         std::span<const LabeledExample> client_data,
                         double eta, int epochs, int batch_size,
                         RngStream& stream) {
  if (!(eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (client_data.empty()) {
    throw std::invalid_argument("empty client dataset: skip this round");
  }

  ParamVector w = params;
  std::vector<std::size_t> order(client_data.size());
  std::vector<const LabeledExample*> batch;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    stream.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(&client_data[order[i]]);
      LossGrad lg = loss_and_gradient_ptrs(spec, w, batch);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * lg.grad[i];
    }
  }

  LocalUpdate out;
  out.effective_gradient.resize(w.size());
  out.new_params.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.effective_gradient[i] = (params[i] - w[i]) / eta;
    // Recomputed from the effective gradient so that
    // params - eta * effective_gradient reproduces new_params bit-exactly.
    out.new_params[i] = params[i] - eta * out.effective_gradient[i];
  }
  return out;
}

}  // namespace medu
