#pragma once

#include <map>
#include <string>
#include <vector>

#include "langlab/bpe.hpp"
#include "langlab/eval.hpp"
#include "langlab/model.hpp"
#include "langlab/train.hpp"

namespace langlab {

struct TokenizerConfig {
    size_t vocab_size = 512;
    std::vector<std::string> specials = {"<pad>"};
    bool whitespace_presplit = false;

    bool operator==(const TokenizerConfig&) const = default;
};

// Input locations. All paths are resolved to absolute form at parse time and
// must exist before any compute starts.
struct DataConfig {
    std::map<std::string, std::string> corpora;  // pretraining: language -> path
    std::map<std::string, double> sampling;      // optional; uniform if empty
    std::string base_checkpoint;
    std::string adapt_corpus;
    std::string eval_corpus;
    std::string vocab;        // target-language vocab file
    std::string src_vocab;    // source-language vocab file (cross-lingual)
    std::string nli_train;
    std::string nli_test;
    std::string src_nli_train;
    std::string template_file;

    bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
    int64_t epochs = 2;
    size_t batch_size = 32;
    double lr = 5e-5;
    size_t seq_len = 128;
    size_t task_reduction = 16;
    ScoreMode score_mode = ScoreMode::MeanFullPrompt;

    bool operator==(const EvalConfig&) const = default;
};

// One experiment: key = value sections {model, tokenizer, data, strategy,
// plan, eval}. Unknown sections or keys are rejected.
struct ExperimentConfig {
    ModelConfig model;
    TokenizerConfig tokenizer;
    DataConfig data;
    StrategySpec strategy;
    TrainPlan plan;
    EvalConfig eval;

    bool operator==(const ExperimentConfig&) const = default;
};

// Parsing starts from `base` (defaults unless a preset seeded it) and
// overwrites only the keys present in the text.
ExperimentConfig parse_experiment_config(const std::string& path,
                                         const ExperimentConfig& base = ExperimentConfig{});
ExperimentConfig parse_experiment_text(const std::string& text, const std::string& base_dir,
                                       const ExperimentConfig& base = ExperimentConfig{});

// Canonical full-form text; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// FNV-1a of the canonical serialization, as 16 hex chars.
std::string config_hash(const ExperimentConfig& config);

// Every non-empty path field must point at an existing file/directory.
void validate_paths(const ExperimentConfig& config);

}  // namespace langlab
