// Copyright Contributors to the SeqSplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient oracle, independent of the engine's
// backward path: it only re-evaluates forward values.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "seqsplat/autograd.hpp"
#include "seqsplat/util.hpp"

namespace gradcheck {

namespace ag = seqsplat::ag;

// Scalarizes an op output with fixed random weights so every output element
// contributes to the checked gradient.
struct Probe {
    std::vector<double> weights;

    explicit Probe(size_t out_size, seqsplat::RngStream& rng) {
        weights.resize(out_size);
        for (auto& w : weights)
            w = rng.uniform(-1.0, 1.0);
    }

    double loss_value(const ag::Tensor& out) const {
        double s = 0.0;
        for (size_t i = 0; i < out.size(); ++i)
            s += weights[i] * out.values()[i];
        return s;
    }

    ag::Tensor loss_tensor(const ag::Tensor& out) const {
        ag::Tensor w = ag::Tensor::from(out.shape(), weights);
        return ag::sum(ag::mul(out, w));
    }
};

// Returns the max mixed relative error over all elements of all inputs.
// Denominator max(|analytic|, |fd|, 1) makes the bound absolute for
// near-zero gradients.
inline double max_rel_err(std::vector<ag::Tensor> inputs,
                          const std::function<ag::Tensor(const std::vector<ag::Tensor>&)>& fn,
                          seqsplat::RngStream& rng, double eps = 1e-6) {
    for (auto& t : inputs)
        t.set_requires_grad(true);
    ag::Tensor out = fn(inputs);
    Probe probe(out.size(), rng);
    for (auto& t : inputs)
        t.zero_grad();
    ag::backward(probe.loss_tensor(out));

    double worst = 0.0;
    for (auto& t : inputs) {
        std::vector<double> analytic = t.grad();
        for (size_t i = 0; i < t.size(); ++i) {
            double saved = t.values()[i];
            double fplus, fminus;
            {
                ag::NoGradGuard ng;
                t.values()[i] = saved + eps;
                fplus = probe.loss_value(fn(inputs));
                t.values()[i] = saved - eps;
                fminus = probe.loss_value(fn(inputs));
                t.values()[i] = saved;
            }
            double fd = (fplus - fminus) / (2.0 * eps);
            double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1.0});
            worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
        }
    }
    return worst;
}

inline ag::Tensor random_tensor(ag::Shape shape, seqsplat::RngStream& rng, double lo = -2.0,
                                double hi = 2.0) {
    std::vector<double> vals(ag::shape_size(shape));
    for (auto& v : vals)
        v = rng.uniform(lo, hi);
    return ag::Tensor::from(std::move(shape), std::move(vals));
}

}  // namespace gradcheck
