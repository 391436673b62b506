#include "langlab/optim.hpp"

#include <cmath>

#include "langlab/error.hpp"

namespace langlab {

ScheduleKind parse_schedule(const std::string& name) {
    if (name == "linear_decay") return ScheduleKind::LinearDecay;
    if (name == "cosine_with_warmup") return ScheduleKind::CosineWithWarmup;
    throw ConfigError("unknown schedule '" + name +
                      "' (expected linear_decay or cosine_with_warmup)");
}

std::string schedule_name(ScheduleKind k) {
    return k == ScheduleKind::LinearDecay ? "linear_decay" : "cosine_with_warmup";
}

double lr_schedule(ScheduleKind kind, int64_t step, int64_t total_steps, int64_t warmup_steps,
                   double lr_peak) {
    if (total_steps < 1) throw ConfigError("lr_schedule: total_steps must be >= 1");
    if (step < 0 || step > total_steps) {
        throw ContractError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
    }
    if (warmup_steps < 0 || warmup_steps >= total_steps) {
        throw ConfigError("lr_schedule: warmup_steps must be in [0, total_steps)");
    }
    if (kind == ScheduleKind::LinearDecay) {
        return lr_peak * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
    }
    if (step < warmup_steps) {
        return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    constexpr double kPi = 3.14159265358979323846;
    return lr_peak * 0.5 * (1.0 + std::cos(kPi * progress));
}

void AdamW::step(const std::vector<NamedTensor>& params, double lr) {
    // Global grad norm in f64, with the NaN scan folded in.
    double sq_sum = 0.0;
    for (const auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw ContractError("adamw_step: tensor '" + name + "' has no gradient");
        }
        for (float g : p.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("adamw_step: non-finite gradient in tensor '" + name + "'");
            }
            sq_sum += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    double grad_scale = 1.0;
    if (config_.clip_norm > 0.0) {
        const double norm = std::sqrt(sq_sum);
        if (norm > config_.clip_norm) grad_scale = config_.clip_norm / norm;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& [name, p] : params) {
        Moments& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(p.numel(), 0.0);
            mom.v.assign(p.numel(), 0.0);
        } else if (mom.m.size() != p.numel()) {
            throw ContractError("adamw_step: tensor '" + name + "' changed size mid-run");
        }
        float* theta = p.data();
        const float* grad = p.grad().data();
        const size_t n = p.numel();
        for (size_t i = 0; i < n; ++i) {
            const double g = static_cast<double>(grad[i]) * grad_scale;
            mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g;
            mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            double x = static_cast<double>(theta[i]);
            x -= lr * config_.weight_decay * x;
            x -= lr * mhat / (std::sqrt(vhat) + config_.eps);
            theta[i] = static_cast<float>(x);
        }
    }
}

void SamplingTable::validate() const {
    if (entries.empty()) throw ConfigError("sampling table: no languages");
    double sum = 0.0;
    for (const auto& [lang, p] : entries) {
        if (p < 0.0) throw ConfigError("sampling table: negative probability for '" + lang + "'");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw ConfigError("sampling table: probabilities sum to " + std::to_string(sum) +
                          ", expected 1");
    }
}

size_t sample_language(const SamplingTable& table, Rng& rng) {
    table.validate();
    const double u = rng.uniform();
    double cum = 0.0;
    for (size_t i = 0; i < table.entries.size(); ++i) {
        cum += table.entries[i].second;
        if (u < cum) return i;
    }
    return table.entries.size() - 1;  // guard against f64 round-off at the top
}

const SamplingTable& multilingual13() {
    static const SamplingTable table{{
        {"id", 0.0554},
        {"eu", 0.0184},
        {"vi", 0.0684},
        {"zh", 0.1339},
        {"ur", 0.0267},
        {"es", 0.1118},
        {"ca", 0.0395},
        {"pt", 0.0867},
        {"fr", 0.1110},
        {"en", 0.2107},
        {"hi", 0.0398},
        {"ar", 0.0638},
        {"bn", 0.0339},
    }};
    return table;
}

}  // namespace langlab
