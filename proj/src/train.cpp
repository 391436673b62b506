#include "langlab/train.hpp"

#include <algorithm>
#include <cmath>

#include "langlab/autograd.hpp"
#include "langlab/error.hpp"

namespace langlab {

namespace {

// Next-token rows are seq_len tokens each, cut on a fixed grid.
size_t chunk_count(size_t corpus_len, size_t seq_len) { return corpus_len / seq_len; }

IdBatch sample_batch(const std::vector<int32_t>& tokens, size_t batch_size, size_t seq_len,
                     Rng& rng, const std::string& what) {
    const size_t n_chunks = chunk_count(tokens.size(), seq_len);
    if (n_chunks == 0) {
        throw DataError("training: corpus for " + what + " has " +
                        std::to_string(tokens.size()) + " tokens, needs at least " +
                        std::to_string(seq_len));
    }
    IdBatch batch;
    batch.batch = batch_size;
    batch.seq = seq_len;
    batch.ids.reserve(batch_size * seq_len);
    for (size_t b = 0; b < batch_size; ++b) {
        const size_t chunk = rng.uniform_index(n_chunks);
        const auto* src = tokens.data() + chunk * seq_len;
        batch.ids.insert(batch.ids.end(), src, src + seq_len);
    }
    return batch;
}

void set_trainable(const std::vector<NamedTensor>& all, const std::vector<std::string>& names) {
    for (const auto& [name, t] : all) {
        t.set_requires_grad(false);
        t.drop_grad();
    }
    for (const std::string& want : names) {
        bool found = false;
        for (const auto& [name, t] : all) {
            if (name == want) {
                t.set_requires_grad(true);
                found = true;
                break;
            }
        }
        if (!found) throw ContractError("training: no tensor named '" + want + "'");
    }
}

void clear_training_state(const Model& model) {
    for (const auto& [name, t] : model.named()) {
        (void)name;
        t.set_requires_grad(false);
        t.drop_grad();
    }
}

// One optimization phase over a single token stream. Steps are logged with a
// global (cross-phase) step index; lr follows the phase-local schedule.
void run_phase(Model& model, const std::vector<int32_t>& tokens,
               const std::vector<std::string>& trainable, const TrainPlan& plan,
               int64_t phase_steps, Rng& rng, int64_t& global_step, const std::string& what,
               TrainSummary& summary) {
    if (phase_steps == 0) return;
    const auto all = model.named();
    set_trainable(all, trainable);
    std::vector<NamedTensor> train_tensors;
    for (const auto& nt : all) {
        if (std::find(trainable.begin(), trainable.end(), nt.first) != trainable.end()) {
            train_tensors.push_back(nt);
        }
    }
    AdamW opt(plan.optim);
    for (int64_t s = 0; s < phase_steps; ++s) {
        for (auto& [name, t] : train_tensors) {
            (void)name;
            t.drop_grad();
        }
        IdBatch batch = sample_batch(tokens, plan.batch_size, plan.seq_len, rng, what);
        Tensor loss = lm_loss(model, batch);
        const double loss_val = loss.value();
        ++global_step;
        if (!std::isfinite(loss_val)) {
            throw NumericError("training: non-finite loss at step " +
                               std::to_string(global_step));
        }
        const double lr = lr_schedule(plan.schedule, s, phase_steps, plan.warmup_steps,
                                      plan.lr_peak);
        backward(loss);
        opt.step(train_tensors, lr);
        summary.steps.push_back({global_step, loss_val, lr});
    }
}

}  // namespace

TrainSummary pretrain(Model& model, const std::map<std::string, std::vector<int32_t>>& corpora,
                      const SamplingTable& table, const TrainPlan& plan,
                      const std::string& ckpt_root) {
    if (plan.steps < 1) throw ConfigError("pretrain: steps must be >= 1");
    table.validate();

    TrainSummary summary;
    const auto all = model.named();
    std::vector<std::string> all_names;
    for (const auto& [name, t] : all) {
        (void)name;
        all_names.push_back(name);
    }
    set_trainable(all, all_names);

    Rng rng(plan.seed);
    AdamW opt(plan.optim);
    auto save_at = [&](int64_t step) {
        const std::string dir = ckpt_root + "/step-" + std::to_string(step);
        save_checkpoint(model, step, dir);
        summary.checkpoint_steps.push_back(step);
        summary.final_checkpoint = dir;
    };
    for (int64_t s = 0; s < plan.steps; ++s) {
        for (const auto& [name, t] : all) {
            (void)name;
            t.drop_grad();
        }
        const size_t lang = sample_language(table, rng);
        const auto& lang_name = table.entries[lang].first;
        auto it = corpora.find(lang_name);
        if (it == corpora.end() || it->second.empty()) {
            throw DataError("pretrain: no corpus for sampled language '" + lang_name + "'");
        }
        IdBatch batch = sample_batch(it->second, plan.batch_size, plan.seq_len, rng,
                                     "language '" + lang_name + "'");
        Tensor loss = lm_loss(model, batch);
        const double loss_val = loss.value();
        if (!std::isfinite(loss_val)) {
            throw NumericError("pretrain: non-finite loss at step " + std::to_string(s + 1));
        }
        const double lr = lr_schedule(plan.schedule, s, plan.steps, plan.warmup_steps,
                                      plan.lr_peak);
        backward(loss);
        opt.step(all, lr);
        summary.steps.push_back({s + 1, loss_val, lr});
        if (plan.checkpoint_every > 0 && (s + 1) % plan.checkpoint_every == 0) {
            save_at(s + 1);
        }
    }
    if (summary.checkpoint_steps.empty() || summary.checkpoint_steps.back() != plan.steps) {
        save_at(plan.steps);
    }
    clear_training_state(model);
    return summary;
}

AdaptResult adapt(const std::string& base_ckpt_dir, const BpeVocab& new_vocab,
                  const std::vector<int32_t>& corpus_tokens, const StrategySpec& spec,
                  const TrainPlan& plan, const std::string& out_dir,
                  const std::string& language_tag) {
    if (plan.steps < 0) throw ConfigError("adapt: steps must be >= 0");

    LoadedCheckpoint base = load_checkpoint(base_ckpt_dir);
    AdaptResult result;
    result.base_step = base.step;
    result.model = std::move(base.model);
    Model& model = result.model;

    // New language, new vocabulary: replace wte wholesale. wpe keeps its
    // pretrained values (finetuned only when the embedding set includes it).
    model.config.vocab_size = new_vocab.vocab_size();
    model.params.wte = seeded_init({model.config.vocab_size, model.config.d_model},
                                   InitSpec::normal(0.0, 0.02), plan.seed ^ 0x9e3779b97f4a7c15ULL);
    if (model.adapters) {
        throw ContractError("adapt: base checkpoint already carries an adapter bank");
    }
    inject_adapters(model, spec.adapter_config, plan.seed ^ 0x517cc1b727220a95ULL);
    model.adapters->language_tag = language_tag;

    Rng rng(plan.seed);
    int64_t global_step = 0;
    TrainSummary summary;
    const size_t n_phases = phase_count(spec.strategy);
    for (size_t phase = 0; phase < n_phases; ++phase) {
        // Two-phase strategy splits the budget 50/50 (remainder to phase 2).
        int64_t phase_steps = plan.steps;
        if (n_phases == 2) {
            phase_steps = phase == 0 ? plan.steps / 2 : plan.steps - plan.steps / 2;
        }
        run_phase(model, corpus_tokens,
                  trainable_names(spec, phase, model.config.n_layers), plan, phase_steps, rng,
                  global_step, "adaptation language", summary);
    }
    clear_training_state(model);
    result.steps = std::move(summary.steps);

    save_checkpoint(model, result.base_step, out_dir);
    result.checkpoint_dir = out_dir;
    return result;
}

double PerplexityReport::ppl_per_token() const {
    if (tokens == 0) throw ContractError("perplexity: no scored tokens");
    return std::exp(nll / static_cast<double>(tokens));
}

double PerplexityReport::ppl_per_byte() const {
    if (bytes == 0) throw ContractError("perplexity: byte length unknown");
    return std::exp(nll / static_cast<double>(bytes));
}

PerplexityReport perplexity(const Model& model, const std::vector<int32_t>& tokens,
                            size_t seq_len, size_t batch_size, size_t text_bytes) {
    if (seq_len < 2) throw ConfigError("perplexity: seq_len must be >= 2");
    const size_t n_chunks = chunk_count(tokens.size(), seq_len);
    if (n_chunks == 0) {
        throw DataError("perplexity: corpus shorter than one sequence");
    }
    PerplexityReport report;
    report.bytes = text_bytes;
    for (size_t first = 0; first < n_chunks; first += batch_size) {
        const size_t rows = std::min(batch_size, n_chunks - first);
        IdBatch batch;
        batch.batch = rows;
        batch.seq = seq_len;
        batch.ids.reserve(rows * seq_len);
        for (size_t b = 0; b < rows; ++b) {
            const auto* src = tokens.data() + (first + b) * seq_len;
            batch.ids.insert(batch.ids.end(), src, src + seq_len);
        }
        Tensor loss = lm_loss(model, batch);
        const size_t counted = rows * (seq_len - 1);
        report.nll += loss.value() * static_cast<double>(counted);
        report.tokens += counted;
    }
    return report;
}

}  // namespace langlab
