#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "mgfte/tensor.hpp"

namespace mgfte {

/// One parameter entry whose reverse-mode and finite-difference gradients
/// disagree the most, plus where it lives.
struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckIssue {
    std::string param;
    std::size_t index = 0;
    std::string what;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    GradCheckEntry worst;
    std::size_t entries_checked = 0;
    std::vector<GradCheckIssue> issues;  // non-finite losses at perturbed points, etc.

    bool ok(double tolerance) const { return issues.empty() && max_rel_err < tolerance; }
};

/// Named view into a live parameter tensor that grad_check may perturb.
struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
};

/// Compares reverse-mode gradients against central finite differences
/// (f(x+h) - f(x-h)) / 2h for every entry of every listed parameter.
///
/// Error metric per entry: |a - b| / max(1, |a|, |b|). The unit floor keeps
/// the check meaningful for near-zero gradients where raw relative error is
/// dominated by finite-difference noise. Always run at 64-bit.
inline GradCheckReport grad_check(const std::vector<ParamRef>& params,
                                  const std::vector<Tensor>& analytic_grads,
                                  const std::function<double()>& loss_fn,
                                  double step = 1e-5) {
    if (params.size() != analytic_grads.size())
        throw std::invalid_argument("grad_check: params/grads size mismatch");
    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].tensor;
        const Tensor& g = analytic_grads[p];
        if (!t.same_shape(g))
            throw std::invalid_argument("grad_check: grad shape mismatch for " + params[p].name);
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            double orig = t.data[i];
            t.data[i] = orig + step;
            double fp = loss_fn();
            t.data[i] = orig - step;
            double fm = loss_fn();
            t.data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.issues.push_back({params[p].name, i, "non-finite loss at perturbed point"});
                continue;
            }
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = g.data[i];
            double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            double rel = std::abs(analytic - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {params[p].name, i, analytic, numeric, rel};
            }
        }
    }
    return report;
}

}  // namespace mgfte
