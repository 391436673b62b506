#include "langlab/tensor.hpp"

#include <cmath>

#include "langlab/error.hpp"
#include "langlab/rng.hpp"

namespace langlab {

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

static void validate_shape(const std::vector<size_t>& shape) {
    for (size_t d : shape) {
        if (d == 0) throw ConfigError("tensor dimension must be >= 1");
    }
}

Tensor Tensor::zeros(const std::vector<size_t>& shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(shape_numel(shape), 0.0f);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const std::vector<size_t>& shape, float value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    for (auto& x : t.vec()) x = value;
    return t;
}

Tensor Tensor::from_data(const std::vector<size_t>& shape, std::vector<float> data,
                         bool requires_grad) {
    validate_shape(shape);
    if (data.size() != shape_numel(shape)) {
        throw ContractError("from_data: data length does not match shape");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

void Tensor::ensure_grad() const {
    if (impl_->grad.size() != impl_->data.size()) {
        impl_->grad.assign(impl_->data.size(), 0.0f);
    }
}

void Tensor::zero_grad() const {
    if (!impl_->grad.empty()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
    }
}

double Tensor::value() const {
    if (numel() != 1) throw ContractError("value(): tensor is not scalar");
    if (impl_->scalar_f64) return *impl_->scalar_f64;
    return static_cast<double>(impl_->data[0]);
}

Tensor seeded_init(const std::vector<size_t>& shape, const InitSpec& spec, uint64_t seed,
                   bool requires_grad) {
    validate_shape(shape);
    if (spec.scheme == InitScheme::Normal && spec.b < 0.0) {
        throw ConfigError("seeded_init: normal std must be >= 0");
    }
    Tensor t = Tensor::zeros(shape, requires_grad);
    if (spec.scheme == InitScheme::Zeros) return t;
    Rng rng(seed);
    float* p = t.data();
    const size_t n = t.numel();
    if (spec.scheme == InitScheme::Normal) {
        for (size_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.normal(spec.a, spec.b));
    } else {
        for (size_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.uniform(spec.a, spec.b));
    }
    return t;
}

uint64_t fnv1a64(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t tensor_checksum(const Tensor& t) {
    return fnv1a64(t.data(), t.numel() * sizeof(float));
}

namespace {
bool g_finite_checks = false;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks) return;
    for (float x : t.vec()) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

}  // namespace langlab
