#pragma once

#include <functional>

#include "medu/dataset.hpp"
#include "medu/model.hpp"
#include "medu/rng.hpp"

namespace medu {

/// Edge-case label-flipping backdoor: the adversarial client relabels a
/// fraction of its source-class examples to the target class.
struct BackdoorSpec {
  int source_class = 0;
  int target_class = 1;
  double fraction = 1.0;  // in (0, 1]
  // Optional override of the class-id selector.
  std::function<bool(const LabeledExample&)> selector;

  bool matches(const LabeledExample& ex) const {
    return selector ? selector(ex) : ex.label == source_class;
  }
  void validate() const;
};

struct BackdoorData {
  std::vector<LabeledExample> poisoned_client;
  Dataset backdoor_test;  // trigger inputs carrying the target label
};

/// Poisons the client shard and builds the trigger set from the held-out
/// pool's matching examples, relabeled to the target. Rejects when either
/// side has no matching examples.
BackdoorData inject_backdoor(const std::vector<LabeledExample>& client,
                             const Dataset& test_pool, const BackdoorSpec& spec,
                             RngStream& stream);

/// Fraction of argmax-correct predictions; ties resolve to the lowest class.
double evaluate(const ModelSpec& spec, const ParamVector& params,
                const Dataset& test);

/// Attack success rate: fraction of trigger inputs classified as the target.
double backdoor_accuracy(const ModelSpec& spec, const ParamVector& params,
                         const Dataset& backdoor_test);

}  // namespace medu
