#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "langlab/bpe.hpp"
#include "langlab/checkpoint.hpp"
#include "langlab/model.hpp"
#include "langlab/optim.hpp"

namespace langlab {

// Knobs for one training run. Adaptation derives its phase structure (and
// the 50/50 step split for the two-phase strategy) from the StrategySpec;
// `steps` is always the total budget across phases.
struct TrainPlan {
    int64_t steps = 2000;
    size_t batch_size = 16;
    size_t seq_len = 64;
    ScheduleKind schedule = ScheduleKind::CosineWithWarmup;
    double lr_peak = 1e-3;
    int64_t warmup_steps = 20;
    AdamWConfig optim;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only (pretraining)
    uint64_t seed = 0;

    bool operator==(const TrainPlan&) const = default;
};

struct StepLog {
    int64_t step = 0;  // 1-based global step
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainSummary {
    std::vector<StepLog> steps;
    std::vector<int64_t> checkpoint_steps;
    std::string final_checkpoint;
};

// Causal-LM pretraining over per-language token streams, sampling a language
// per step from the table. Corpus streams are chunked to seq_len on a fixed
// grid with no document-boundary tokens. Checkpoints land in
// `ckpt_root/step-<n>` at every checkpoint_every steps plus the final step.
TrainSummary pretrain(Model& model, const std::map<std::string, std::vector<int32_t>>& corpora,
                      const SamplingTable& table, const TrainPlan& plan,
                      const std::string& ckpt_root);

struct AdaptResult {
    Model model;
    int64_t base_step = 0;  // pretraining step of the adapted backbone
    std::string checkpoint_dir;
    std::vector<StepLog> steps;
};

// Language adaptation: loads the base checkpoint, re-initializes wte for the
// new vocabulary (normal(0, 0.02); wpe keeps its pretrained values), injects
// a zero-init adapter bank, then trains per the strategy's phases. The saved
// checkpoint keeps the base's pretraining step tag. A 0-step budget returns
// the base with only the wte re-init and identity adapters applied.
AdaptResult adapt(const std::string& base_ckpt_dir, const BpeVocab& new_vocab,
                  const std::vector<int32_t>& corpus_tokens, const StrategySpec& spec,
                  const TrainPlan& plan, const std::string& out_dir,
                  const std::string& language_tag);

struct PerplexityReport {
    double nll = 0.0;   // total negative log-likelihood, f64 nats
    size_t tokens = 0;  // scored next-token positions
    size_t bytes = 0;   // byte length of the underlying text (0 if not given)

    double ppl_per_token() const;
    // Tokenizer-independent: normalizes by text bytes instead of tokens, so
    // models with different vocabularies are comparable on the same text.
    double ppl_per_byte() const;
};

// Held-out perplexity over the full chunk grid of `tokens` (no sampling).
PerplexityReport perplexity(const Model& model, const std::vector<int32_t>& tokens,
                            size_t seq_len, size_t batch_size, size_t text_bytes = 0);

}  // namespace langlab
