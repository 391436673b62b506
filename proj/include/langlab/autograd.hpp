#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "langlab/tensor.hpp"

namespace langlab {

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1, walks the
// recorded graph in reverse topological order, and accumulates into the grad
// buffers of every reachable tensor with requires_grad. Raises NumericError
// (naming the op) if any produced gradient is non-finite.
void backward(const Tensor& loss);

struct GradCheckEntry {
    std::string name;
    size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    bool passed = true;
    double max_rel_err = 0.0;
    size_t checked = 0;
    std::vector<GradCheckEntry> failures;  // entries over tolerance
    GradCheckEntry worst;
};

// Central-difference check of d(loss)/d(theta) for a sampled coordinate
// subset of each named parameter. `build_loss` must rebuild the graph from
// the current parameter values and return a scalar. Relative error is
// |a - n| / max(|a| + |n|, floor): the clamp grants near-zero pairs an
// absolute allowance of floor*tol, since a central difference of an f32
// forward pass cannot resolve gradients below its rounding noise (roughly
// the loss's reproducibility divided by 2h). Set `floor` to that noise
// scale divided by `tol` when checking deep models.
GradCheckReport grad_check(const std::function<Tensor()>& build_loss,
                           const std::vector<NamedTensor>& params, double h, double tol,
                           size_t samples_per_tensor, uint64_t seed, double floor = 1e-10);

}  // namespace langlab
