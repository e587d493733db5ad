#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phtk/graph.hpp"

namespace phtk::grad {

// Builds a scalar loss node from leaf node ids. Called many times with
// perturbed leaf values, so it must be a pure function of the leaves.
using LossBuilder = std::function<int(Graph&, const std::vector<int>&)>;

struct GradCheckReport {
    bool passed = false;
    std::vector<double> max_rel_error;  // one entry per leaf
    std::string failure;                // non-empty when a non-finite value appeared

    double worst() const {
        double w = 0;
        for (double e : max_rel_error) w = std::max(w, e);
        return w;
    }
};

// Central finite differences vs the tape's analytic gradient.
// rel error = |a - n| / max(|a|, |n|, 1e-8)
GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor> leaves,
                           double step = 1e-5, double tol = 1e-6);

}  // namespace phtk::grad
