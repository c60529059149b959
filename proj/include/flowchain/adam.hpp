#pragma once

#include <vector>

#include "flowchain/numcore.hpp"
#include "flowchain/tape.hpp"

namespace flowchain {

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    explicit AdamState(const ParameterSet& params, double lr = 1e-4);
};

/// One bias-corrected Adam update. Parameters without a gradient are treated as
/// having a zero gradient. Throws NumericError naming the first non-finite gradient.
void adam_step(AdamState& state, ParameterSet& params, const Gradients& grads);

}  // namespace flowchain
