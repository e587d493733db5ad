#include "phtk/gradcheck.hpp"

#include <cmath>

namespace phtk::grad {

namespace {

double eval(const LossBuilder& build, const std::vector<Tensor>& leaves) {
    Graph g;
    std::vector<int> ids;
    ids.reserve(leaves.size());
    for (const Tensor& t : leaves) ids.push_back(g.leaf(t, false));
    int loss = build(g, ids);
    return g.value(loss).data[0];
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor> leaves,
                           double step, double tol) {
    GradCheckReport report;
    if (step <= 0) throw ConfigError("grad_check: step must be positive");

    Graph g;
    std::vector<int> ids;
    for (const Tensor& t : leaves) ids.push_back(g.leaf(t, true));
    int loss = build(g, ids);
    g.backward(loss);

    report.max_rel_error.assign(leaves.size(), 0.0);
    bool ok = true;
    for (std::size_t p = 0; p < leaves.size(); ++p) {
        const Tensor& analytic = g.gradient(ids[p]);
        for (std::size_t i = 0; i < leaves[p].size(); ++i) {
            double keep = leaves[p].data[i];
            leaves[p].data[i] = keep + step;
            double up = eval(build, leaves);
            leaves[p].data[i] = keep - step;
            double dn = eval(build, leaves);
            leaves[p].data[i] = keep;
            double numeric = (up - dn) / (2.0 * step);
            double a = analytic.size() ? analytic.data[i] : 0.0;
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                report.failure = "non-finite gradient at leaf " + std::to_string(p) +
                                 " index " + std::to_string(i);
                return report;
            }
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            double rel = std::fabs(a - numeric) / denom;
            report.max_rel_error[p] = std::max(report.max_rel_error[p], rel);
            if (rel > tol) ok = false;
        }
    }
    report.passed = ok;
    return report;
}

}  // namespace phtk::grad
