#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "langlab/bpe.hpp"
#include "langlab/model.hpp"

namespace langlab {

enum class NliLabel { Entailment = 0, Contradiction = 1, Neutral = 2 };

NliLabel parse_label(const std::string& name);
const char* label_name(NliLabel label);

struct NLIExample {
    std::string premise;
    std::string hypothesis;
    NliLabel label = NliLabel::Entailment;
};

// UTF-8 TSV, one `premise<TAB>hypothesis<TAB>label` row per line.
std::vector<NLIExample> load_nli_tsv(const std::string& path);

// Pattern with [premise], [hypothesis], and a mask slot (any-cased bracketed
// "mask"), each exactly once; one verbalizer per label.
struct PromptTemplate {
    std::string pattern;
    std::array<std::string, 3> verbalizers;

    void validate() const;
};

// Template file: line 1 pattern, lines 2-4 `label<TAB>verbalizer`.
PromptTemplate load_template(const std::string& path);

std::string render_prompt(const PromptTemplate& tpl, const NLIExample& ex, NliLabel label);

struct RenderedPrompt {
    std::string text;
    size_t verbalizer_begin = 0;  // byte span of the substituted verbalizer
    size_t verbalizer_end = 0;
};

RenderedPrompt render_prompt_span(const PromptTemplate& tpl, const NLIExample& ex,
                                  NliLabel label);

// What the label score averages over: every next-token position of the
// rendered prompt (default), or only positions whose target token overlaps
// the verbalizer span.
enum class ScoreMode { MeanFullPrompt, VerbalizerOnly };

struct ZeroShotResult {
    NliLabel prediction = NliLabel::Entailment;
    std::array<double, 3> scores{};  // mean per-token log-probability per label
};

// Scores each candidate label's rendered prompt under the causal LM and takes
// the argmax; ties break toward the smaller label index (entailment first).
ZeroShotResult zero_shot_predict(const Model& model, const BpeVocab& vocab,
                                 const PromptTemplate& tpl, const NLIExample& ex,
                                 ScoreMode mode = ScoreMode::MeanFullPrompt);

// Per-layer task adapters plus a 3-way linear head over the final hidden
// state at the last non-pad position. Stacks after language adapters.
struct TaskHead {
    std::vector<Bottleneck> adapters;
    Tensor cls_w;  // [d, 3]
    Tensor cls_b;  // [3]

    std::vector<NamedTensor> named() const;
};

TaskHead build_task_head(size_t d_model, size_t n_layers, size_t reduction, uint64_t seed);

struct TaskHyper {
    int64_t epochs = 2;
    size_t batch_size = 32;
    double lr = 5e-5;
    size_t seq_len = 128;
};

// Supervised training of head + task adapters with the backbone (embeddings,
// transformer, language adapters) frozen. Inputs are
// `premise + "\n" + hypothesis`, truncated longest-first (premise on ties)
// to seq_len, padded with the vocab's reserved pad special.
void train_task_head(const Model& model, TaskHead& head, const BpeVocab& vocab,
                     const std::vector<NLIExample>& train_set, const TaskHyper& hyper,
                     uint64_t seed);

std::vector<NliLabel> classify(const Model& model, const TaskHead& head, const BpeVocab& vocab,
                               const std::vector<NLIExample>& examples, size_t seq_len,
                               size_t batch_size = 32);

struct EvalReport {
    double accuracy = 0.0;
    size_t total = 0;
    // confusion[gold][predicted]
    std::array<std::array<size_t, 3>, 3> confusion{};
};

EvalReport evaluate_accuracy(const std::vector<NliLabel>& predictions,
                             const std::vector<NliLabel>& gold);

// Transfer evaluation: the target model (its vocabulary, embeddings, and
// language adapters) with the source-trained task head.
double cross_lingual_eval(const Model& target_model, const TaskHead& source_head,
                          const BpeVocab& target_vocab, const std::vector<NLIExample>& eval_set,
                          size_t seq_len, size_t batch_size = 32);

}  // namespace langlab
