#include "langlab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "langlab/error.hpp"
#include "langlab/rng.hpp"

namespace langlab {

namespace {

void topo_visit(const Tensor& t, std::unordered_set<const TensorImpl*>& seen,
                std::vector<Tensor>& order) {
    // Iterative DFS; graphs can be thousands of nodes deep at long seq lens.
    struct Frame {
        Tensor tensor;
        size_t next_input = 0;
    };
    if (seen.count(t.raw())) return;
    std::vector<Frame> stack;
    stack.push_back({t, 0});
    seen.insert(t.raw());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& node = f.tensor.raw()->node;
        if (!node || f.next_input >= node->inputs.size()) {
            order.push_back(f.tensor);
            stack.pop_back();
            continue;
        }
        const Tensor& in = node->inputs[f.next_input++];
        if (!seen.count(in.raw())) {
            seen.insert(in.raw());
            stack.push_back({in, 0});
        }
    }
}

}  // namespace

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (!loss.requires_grad()) return;

    std::unordered_set<const TensorImpl*> seen;
    std::vector<Tensor> order;
    topo_visit(loss, seen, order);

    loss.impl()->grad.assign(1, 1.0f);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const auto& node = it->raw()->node;
        if (!node || !node->backward) continue;
        if (!it->has_grad()) continue;  // unreached branch of the graph
        node->backward();
        for (const Tensor& in : node->inputs) {
            if (!in.has_grad()) continue;
            for (float g : in.grad()) {
                if (!std::isfinite(g)) {
                    throw NumericError(std::string("backward: non-finite gradient out of op '") +
                                       node->op + "'");
                }
            }
        }
    }
}

GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<NamedTensor>& params, double h, double tol,
                           size_t samples_per_tensor, uint64_t seed, double floor) {
    if (h <= 0.0) throw ContractError("grad_check: h must be positive");

    // One analytic sweep.
    for (const auto& [name, p] : params) {
        (void)name;
        p.impl()->requires_grad = true;
        p.impl()->grad.clear();
    }
    Tensor loss = build_loss();
    backward(loss);

    GradCheckReport report;
    Rng rng(seed);
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw ContractError("grad_check: parameter '" + name + "' received no gradient");
        }
        const size_t n = p.numel();
        const size_t take = std::min(samples_per_tensor, n);
        for (size_t s = 0; s < take; ++s) {
            const size_t idx =
                (take == n) ? s : static_cast<size_t>(rng.uniform_index(n));
            const double analytic = p.grad()[idx];

            const float saved = p.data()[idx];
            const float plus = static_cast<float>(static_cast<double>(saved) + h);
            const float minus = static_cast<float>(static_cast<double>(saved) - h);
            p.data()[idx] = plus;
            const double f_plus = build_loss().value();
            p.data()[idx] = minus;
            const double f_minus = build_loss().value();
            p.data()[idx] = saved;

            // Use the step the f32 parameter actually took, not the nominal h.
            const double step = static_cast<double>(plus) - static_cast<double>(minus);
            const double numeric = (f_plus - f_minus) / step;

            GradCheckEntry e;
            e.name = name;
            e.index = idx;
            e.analytic = analytic;
            e.numeric = numeric;
            // The clamp turns `tol` into an absolute allowance of floor*tol
            // for near-zero pairs, where a finite difference of an f32
            // forward pass resolves nothing.
            const double denom =
                std::max(std::abs(analytic) + std::abs(numeric), floor);
            e.rel_err = std::abs(analytic - numeric) / denom;
            ++report.checked;
            if (e.rel_err > report.max_rel_err) {
                report.max_rel_err = e.rel_err;
                report.worst = e;
            }
            if (e.rel_err > tol) {
                report.passed = false;
                report.failures.push_back(e);
            }
        }
    }
    for (const auto& [name, p] : params) {
        (void)name;
        p.impl()->grad.clear();
    }
    return report;
}

}  // namespace langlab
