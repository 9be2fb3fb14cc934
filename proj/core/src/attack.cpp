#include "medu/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace medu {

void BackdoorSpec::validate() const {
  if (target_class == source_class && !selector) {
    throw std::invalid_argument("backdoor target must differ from the source class");
  }
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("poison fraction must be in (0, 1]");
  }
}

BackdoorData inject_backdoor(const std::vector<LabeledExample>& client,
                             const Dataset& test_pool, const BackdoorSpec& spec,
                             RngStream& stream) {
  spec.validate();
  std::vector<std::size_t> matching;
  for (std::size_t i = 0; i < client.size(); ++i) {
    if (spec.matches(client[i])) matching.push_back(i);
  }
  if (matching.empty()) {
    throw std::invalid_argument("client has no examples matching the backdoor");
  }

  BackdoorData out;
  out.poisoned_client = client;
  stream.shuffle(matching);
  const std::size_t n_poison = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(spec.fraction * static_cast<double>(matching.size()))));
  for (std::size_t i = 0; i < std::min(n_poison, matching.size()); ++i) {
    out.poisoned_client[matching[i]].label = spec.target_class;
  }

  out.backdoor_test.feature_dim = test_pool.feature_dim;
  out.backdoor_test.num_classes = test_pool.num_classes;
  for (const LabeledExample& ex : test_pool.examples) {
    if (!spec.matches(ex)) continue;
    LabeledExample trigger = ex;
    trigger.label = spec.target_class;
    out.backdoor_test.examples.push_back(std::move(trigger));
  }
  if (out.backdoor_test.examples.empty()) {
    throw std::invalid_argument("test pool has no examples matching the backdoor");
  }
  return out;
}

double evaluate(const ModelSpec& spec, const ParamVector& params,
                const Dataset& test) {
  if (test.examples.empty()) throw std::invalid_argument("empty test set");
  std::size_t correct = 0;
  for (const LabeledExample& ex : test.examples) {
    if (predict_class(spec, params, ex.features) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.examples.size());
}

double backdoor_accuracy(const ModelSpec& spec, const ParamVector& params,
                         const Dataset& backdoor_test) {
  // Trigger examples carry the implanted target label, so attack success is
  // plain prediction agreement.
  return evaluate(spec, params, backdoor_test);
}

}  // namespace medu
