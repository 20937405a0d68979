#pragma once

// Central finite-difference verification of tape gradients. The numeric side
// re-runs the forward pass with tape == nullptr, so it shares no backward
// code with the path under test.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mtda/errors.hpp"
#include "mtda/tensor.hpp"

namespace mtda {

// forward_fn must rebuild the graph from the current values of `inputs` and
// return a scalar. Returns max over all input elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename Real>
Real grad_check(const std::function<TensorPtr<Real>(Tape<Real>*)>& forward_fn,
                const std::vector<TensorPtr<Real>>& inputs, Real eps = Real(1e-5)) {
    if (eps <= Real(0)) throw ContractError("grad_check: eps must be positive");

    for (const auto& in : inputs) {
        if (!in->requires_grad) {
            throw ContractError("grad_check: all checked inputs must require gradients");
        }
        in->zero_grad();
    }

    Tape<Real> tape;
    auto loss = forward_fn(&tape);
    if (!loss || loss->size() != 1) {
        throw ContractError("grad_check: forward_fn must return a scalar");
    }
    tape.backward(loss);

    std::vector<std::vector<Real>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) analytic.push_back(in->grad);

    const Real floor = Real(1e-8);
    Real max_err = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& in = inputs[i];
        for (int j = 0; j < in->size(); ++j) {
            const Real orig = in->data[j];
            in->data[j] = orig + eps;
            const Real plus = forward_fn(nullptr)->data[0];
            in->data[j] = orig - eps;
            const Real minus = forward_fn(nullptr)->data[0];
            in->data[j] = orig;
            const Real numeric = (plus - minus) / (Real(2) * eps);
            const Real a = analytic[i][static_cast<std::size_t>(j)];
            const Real err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace mtda
