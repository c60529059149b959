#include "flowchain/adam.hpp"

#include <cmath>

namespace flowchain {

AdamState::AdamState(const ParameterSet& params, double lr) : learning_rate(lr)
{
    m.reserve(params.size());
    v.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        m.push_back(Matrix::Zero(params[i].rows(), params[i].cols()));
        v.push_back(Matrix::Zero(params[i].rows(), params[i].cols()));
    }
}

void adam_step(AdamState& state, ParameterSet& params, const Gradients& grads)
{
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter set");
    for (std::size_t i = 0; i < grads.params.size(); ++i) {
        const Matrix& g = grads.params[i];
        if (g.size() == 0) continue;
        if (g.rows() != params[i].rows() || g.cols() != params[i].cols()) {
            throw ShapeError("adam_step: gradient shape " + shape_string(g) + " for parameter '" +
                             params.name(i) + "' of shape " + shape_string(params[i]));
        }
        if (!g.allFinite()) throw NumericError("adam_step: non-finite gradient for parameter '" + params.name(i) + "'");
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& m = state.m[i];
        Matrix& v = state.v[i];
        const bool has_grad = i < grads.params.size() && grads.params[i].size() != 0;
        if (has_grad) {
            const Matrix& g = grads.params[i];
            m = state.beta1 * m + (1.0 - state.beta1) * g;
            v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
        } else {
            m *= state.beta1;
            v *= state.beta2;
        }
        params[i].array() -=
            state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
    }
}

}  // namespace flowchain
