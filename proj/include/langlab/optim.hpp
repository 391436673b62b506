#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "langlab/rng.hpp"
#include "langlab/tensor.hpp"

namespace langlab {

enum class ScheduleKind { LinearDecay, CosineWithWarmup };

ScheduleKind parse_schedule(const std::string& name);  // linear_decay / cosine_with_warmup
std::string schedule_name(ScheduleKind k);

// Learning rate at `step` of `total_steps`, computed in f64.
//   linear_decay:        lr_peak * (1 - step/total); warmup ignored
//   cosine_with_warmup:  linear 0 -> lr_peak over warmup_steps, then
//                        lr_peak * 0.5 * (1 + cos(pi * progress))
double lr_schedule(ScheduleKind kind, int64_t step, int64_t total_steps, int64_t warmup_steps,
                   double lr_peak);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // the usual AdamW default; 0 disables
    double clip_norm = 0.0;      // 0 disables global-norm clipping

    bool operator==(const AdamWConfig&) const = default;
};

// AdamW with decoupled weight decay. Moments are kept per tensor name in f64;
// the update is theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps),
// after clipping all grads to clip_norm by global norm.
class AdamW {
public:
    explicit AdamW(const AdamWConfig& config) : config_(config) {}

    // Steps only the tensors passed in; anything not passed is untouched.
    // Every passed tensor must have a grad buffer. NaN/Inf grads raise
    // NumericError naming the tensor.
    void step(const std::vector<NamedTensor>& params, double lr);

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return config_; }

private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
    };
    AdamWConfig config_;
    int64_t t_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

// Language sampling distribution for multilingual pretraining.
struct SamplingTable {
    std::vector<std::pair<std::string, double>> entries;

    // Probabilities must be >= 0 and sum to 1 within 1e-6.
    void validate() const;
};

// Index into table.entries, drawn from the table's distribution.
size_t sample_language(const SamplingTable& table, Rng& rng);

// The 13-language OSCAR sampling distribution (probabilities sum to 1.0000).
const SamplingTable& multilingual13();

}  // namespace langlab
