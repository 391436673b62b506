#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace langlab {

class Tensor;

// One op record in the compute graph. The graph is define-by-run: every op
// that sees a grad-requiring input attaches a Node to its output, and
// backward() walks the records in reverse topological order.
struct Node {
    const char* op = "";
    std::vector<Tensor> inputs;
    // Accumulates into the grad buffers of `inputs`, reading the output's grad.
    std::function<void()> backward;
};

struct TensorImpl {
    std::vector<size_t> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until ensure_grad()
    std::shared_ptr<Node> node;
    // Reductions (sum/mean/cross-entropy) keep their f64-accumulated value so
    // finite-difference checks are not limited by f32 readout quantization.
    std::optional<double> scalar_f64;
};

// Value type with shared storage. Copies alias the same buffer; ops never
// mutate their inputs while a graph references them.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const std::vector<size_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<size_t>& shape, float value, bool requires_grad = false);
    static Tensor from_data(const std::vector<size_t>& shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<size_t>& shape() const { return impl_->shape; }
    size_t numel() const { return impl_->data.size(); }
    size_t dim(size_t i) const { return impl_->shape[i]; }
    size_t rank() const { return impl_->shape.size(); }

    // Handle semantics: a const Tensor is a const handle to shared, mutable
    // storage (same contract as shared_ptr), so accessors are const-qualified.
    float* data() const { return impl_->data.data(); }
    std::vector<float>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) const { impl_->requires_grad = v; }

    bool has_grad() const { return !impl_->grad.empty(); }
    void ensure_grad() const;
    void zero_grad() const;
    void drop_grad() const { impl_->grad.clear(); impl_->grad.shrink_to_fit(); }
    std::vector<float>& grad() const { return impl_->grad; }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    TensorImpl* raw() const { return impl_.get(); }

    // f64 readout for scalars; falls back to the f32 value.
    double value() const;

private:
    std::shared_ptr<TensorImpl> impl_;
};

size_t shape_numel(const std::vector<size_t>& shape);

// Named parameter reference; the Tensor shares storage with its owner.
using NamedTensor = std::pair<std::string, Tensor>;

enum class InitScheme { Zeros, Normal, Uniform };

struct InitSpec {
    InitScheme scheme = InitScheme::Zeros;
    double a = 0.0;  // mean for Normal, lower bound for Uniform
    double b = 0.0;  // std for Normal, upper bound for Uniform
    static InitSpec zeros() { return {InitScheme::Zeros, 0, 0}; }
    static InitSpec normal(double mean, double std) { return {InitScheme::Normal, mean, std}; }
    static InitSpec uniform(double lo, double hi) { return {InitScheme::Uniform, lo, hi}; }
};

// Deterministic initialization: identical (shape, spec, seed) gives a
// bitwise-identical buffer.
Tensor seeded_init(const std::vector<size_t>& shape, const InitSpec& spec, uint64_t seed,
                   bool requires_grad = false);

// FNV-1a over the raw f32 bytes; used for freezing checks and checkpoint
// integrity.
uint64_t fnv1a64(const void* bytes, size_t n);
uint64_t tensor_checksum(const Tensor& t);

// When enabled, ops raise NumericError if they produce NaN/Inf. Off by
// default; tests turn it on.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op);

}  // namespace langlab
