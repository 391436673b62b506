#include "langlab/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "langlab/autograd.hpp"
#include "langlab/error.hpp"
#include "langlab/optim.hpp"

namespace langlab {

NliLabel parse_label(const std::string& name) {
    if (name == "entailment") return NliLabel::Entailment;
    if (name == "contradiction") return NliLabel::Contradiction;
    if (name == "neutral") return NliLabel::Neutral;
    throw DataError("unknown NLI label '" + name + "'");
}

const char* label_name(NliLabel label) {
    switch (label) {
        case NliLabel::Entailment: return "entailment";
        case NliLabel::Contradiction: return "contradiction";
        case NliLabel::Neutral: return "neutral";
    }
    throw ContractError("label_name: invalid enum value");
}

std::vector<NLIExample> load_nli_tsv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_nli_tsv: cannot open '" + path + "'");
    std::vector<NLIExample> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            throw DataError("load_nli_tsv: line " + std::to_string(line_no) +
                            " is not premise<TAB>hypothesis<TAB>label");
        }
        NLIExample ex;
        ex.premise = line.substr(0, t1);
        ex.hypothesis = line.substr(t1 + 1, t2 - t1 - 1);
        ex.label = parse_label(line.substr(t2 + 1));
        if (ex.premise.empty() || ex.hypothesis.empty()) {
            throw DataError("load_nli_tsv: line " + std::to_string(line_no) +
                            " has an empty premise or hypothesis");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

// Slot kinds appearing in a template pattern.
enum class Slot { Premise, Hypothesis, Mask };

// Finds `[...]` spans whose inner text is premise/hypothesis/mask
// (mask matched case-insensitively, e.g. `[Mask]` or `[MASK]`).
std::vector<std::pair<size_t, Slot>> find_slots(const std::string& pattern,
                                                std::vector<size_t>* lengths = nullptr) {
    std::vector<std::pair<size_t, Slot>> slots;
    for (size_t i = 0; i < pattern.size(); ++i) {
        if (pattern[i] != '[') continue;
        const size_t close = pattern.find(']', i);
        if (close == std::string::npos) continue;
        std::string inner = pattern.substr(i + 1, close - i - 1);
        std::string lower = inner;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        Slot slot;
        if (inner == "premise") {
            slot = Slot::Premise;
        } else if (inner == "hypothesis") {
            slot = Slot::Hypothesis;
        } else if (lower == "mask") {
            slot = Slot::Mask;
        } else {
            continue;
        }
        slots.emplace_back(i, slot);
        if (lengths) lengths->push_back(close - i + 1);
        i = close;
    }
    return slots;
}

}  // namespace

void PromptTemplate::validate() const {
    size_t premise = 0;
    size_t hypothesis = 0;
    size_t mask = 0;
    for (const auto& [pos, slot] : find_slots(pattern)) {
        (void)pos;
        if (slot == Slot::Premise) ++premise;
        if (slot == Slot::Hypothesis) ++hypothesis;
        if (slot == Slot::Mask) ++mask;
    }
    if (premise != 1 || hypothesis != 1 || mask != 1) {
        throw ConfigError(
            "prompt template must contain [premise], [hypothesis], and a mask slot exactly once");
    }
    for (const auto& v : verbalizers) {
        if (v.empty()) throw ConfigError("prompt template: empty verbalizer");
    }
}

PromptTemplate load_template(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_template: cannot open '" + path + "'");
    PromptTemplate tpl;
    std::string line;
    if (!std::getline(f, line)) throw FormatError("load_template: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tpl.pattern = line;
    std::array<bool, 3> seen{};
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(f, line)) {
            throw FormatError("load_template: expected three label<TAB>verbalizer lines");
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError("load_template: bad verbalizer line '" + line + "'");
        }
        const NliLabel label = parse_label(line.substr(0, tab));
        tpl.verbalizers[static_cast<size_t>(label)] = line.substr(tab + 1);
        seen[static_cast<size_t>(label)] = true;
    }
    if (!seen[0] || !seen[1] || !seen[2]) {
        throw FormatError("load_template: need one verbalizer per label");
    }
    tpl.validate();
    return tpl;
}

RenderedPrompt render_prompt_span(const PromptTemplate& tpl, const NLIExample& ex,
                                  NliLabel label) {
    tpl.validate();
    std::vector<size_t> lengths;
    const auto slots = find_slots(tpl.pattern, &lengths);
    RenderedPrompt out;
    size_t cursor = 0;
    for (size_t s = 0; s < slots.size(); ++s) {
        const auto [pos, slot] = slots[s];
        out.text.append(tpl.pattern, cursor, pos - cursor);
        switch (slot) {
            case Slot::Premise:
                out.text += ex.premise;
                break;
            case Slot::Hypothesis:
                out.text += ex.hypothesis;
                break;
            case Slot::Mask:
                out.verbalizer_begin = out.text.size();
                out.text += tpl.verbalizers[static_cast<size_t>(label)];
                out.verbalizer_end = out.text.size();
                break;
        }
        cursor = pos + lengths[s];
    }
    out.text.append(tpl.pattern, cursor, tpl.pattern.size() - cursor);
    return out;
}

std::string render_prompt(const PromptTemplate& tpl, const NLIExample& ex, NliLabel label) {
    return render_prompt_span(tpl, ex, label).text;
}

namespace {

// Log-probabilities of each realized next token, f64 log-sum-exp.
std::vector<double> next_token_logprobs(const Model& model, const std::vector<int32_t>& ids) {
    IdBatch batch;
    batch.batch = 1;
    batch.seq = ids.size();
    batch.ids = ids;
    Tensor logits = forward_logits(model, batch);
    const size_t vocab = logits.shape().back();
    std::vector<double> out;
    for (size_t t = 1; t < ids.size(); ++t) {
        const float* row = logits.data() + (t - 1) * vocab;
        double mx = row[0];
        for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (size_t j = 0; j < vocab; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        const double logz = mx + std::log(denom);
        out.push_back(static_cast<double>(row[static_cast<size_t>(ids[t])]) - logz);
    }
    return out;
}

}  // namespace

ZeroShotResult zero_shot_predict(const Model& model, const BpeVocab& vocab,
                                 const PromptTemplate& tpl, const NLIExample& ex,
                                 ScoreMode mode) {
    if (model.config.vocab_size != vocab.vocab_size()) {
        throw ConfigError("zero_shot_predict: model and tokenizer vocab sizes differ");
    }
    ZeroShotResult result;
    for (size_t label = 0; label < 3; ++label) {
        const RenderedPrompt prompt = render_prompt_span(tpl, ex, static_cast<NliLabel>(label));
        const std::vector<int32_t> ids = encode(vocab, prompt.text);
        if (ids.size() < 2) {
            throw DataError("zero_shot_predict: prompt tokenizes to fewer than 2 tokens");
        }
        const std::vector<double> logprobs = next_token_logprobs(model, ids);
        double sum = 0.0;
        size_t counted = 0;
        if (mode == ScoreMode::MeanFullPrompt) {
            for (double lp : logprobs) sum += lp;
            counted = logprobs.size();
        } else {
            // Positions whose target token overlaps the verbalizer byte span.
            size_t offset = 0;
            for (size_t t = 0; t < ids.size(); ++t) {
                const size_t len = decode(vocab, {ids[t]}).size();
                const size_t begin = offset;
                const size_t end = offset + len;
                offset = end;
                if (t == 0) continue;
                if (begin < prompt.verbalizer_end && end > prompt.verbalizer_begin) {
                    sum += logprobs[t - 1];
                    ++counted;
                }
            }
            if (counted == 0) {
                throw DataError("zero_shot_predict: no token overlaps the verbalizer span");
            }
        }
        result.scores[label] = sum / static_cast<double>(counted);
    }
    result.prediction = NliLabel::Entailment;
    for (size_t label = 1; label < 3; ++label) {
        if (result.scores[label] > result.scores[static_cast<size_t>(result.prediction)]) {
            result.prediction = static_cast<NliLabel>(label);
        }
    }
    return result;
}

std::vector<NamedTensor> TaskHead::named() const {
    std::vector<NamedTensor> out;
    for (size_t l = 0; l < adapters.size(); ++l) {
        const std::string p = "task" + std::to_string(l) + ".adpt.";
        out.emplace_back(p + "down", adapters[l].down);
        out.emplace_back(p + "down_bias", adapters[l].down_bias);
        out.emplace_back(p + "up", adapters[l].up);
        out.emplace_back(p + "up_bias", adapters[l].up_bias);
    }
    out.emplace_back("cls.w", cls_w);
    out.emplace_back("cls.b", cls_b);
    return out;
}

TaskHead build_task_head(size_t d_model, size_t n_layers, size_t reduction, uint64_t seed) {
    if (reduction == 0 || d_model / reduction < 1) {
        throw ConfigError("task head: reduction leaves no bottleneck width");
    }
    TaskHead head;
    const size_t b = bottleneck_width(d_model, reduction);
    for (size_t l = 0; l < n_layers; ++l) {
        head.adapters.push_back(build_bottleneck(d_model, b, seed + l));
    }
    head.cls_w = seeded_init({d_model, 3}, InitSpec::normal(0.0, 0.02), seed + n_layers);
    head.cls_b = Tensor::zeros({3});
    return head;
}

namespace {

int32_t pad_id_for(const BpeVocab& vocab) {
    const int32_t named = vocab.special_id("<pad>");
    if (named >= 0) return named;
    if (!vocab.specials.empty()) return vocab.first_special_id();
    throw ConfigError("classification batching requires a reserved pad special in the vocab");
}

struct ClassifierRow {
    std::vector<int32_t> ids;  // length seq_len, padded
    int32_t last = 0;          // last non-pad position
};

ClassifierRow encode_pair(const BpeVocab& vocab, const NLIExample& ex, size_t seq_len,
                          int32_t pad_id) {
    std::vector<int32_t> p = encode(vocab, ex.premise);
    std::vector<int32_t> sep = encode(vocab, "\n");
    std::vector<int32_t> h = encode(vocab, ex.hypothesis);
    if (seq_len < sep.size() + 2) {
        throw ConfigError("classification seq_len too small for premise + separator + hypothesis");
    }
    // Longest-first truncation, premise on ties.
    while (p.size() + sep.size() + h.size() > seq_len) {
        if (p.size() >= h.size() && p.size() > 1) {
            p.pop_back();
        } else if (h.size() > 1) {
            h.pop_back();
        } else {
            p.pop_back();
        }
    }
    ClassifierRow row;
    row.ids.reserve(seq_len);
    row.ids.insert(row.ids.end(), p.begin(), p.end());
    row.ids.insert(row.ids.end(), sep.begin(), sep.end());
    row.ids.insert(row.ids.end(), h.begin(), h.end());
    row.last = static_cast<int32_t>(row.ids.size() - 1);
    row.ids.resize(seq_len, pad_id);
    return row;
}

// Pooled classification logits [rows, 3] for a slice of examples.
Tensor classifier_logits(const Model& model, const TaskHead& head, const BpeVocab& vocab,
                         const std::vector<NLIExample>& examples,
                         const std::vector<size_t>& order, size_t first, size_t rows,
                         size_t seq_len, std::vector<int32_t>* labels_out) {
    const int32_t pad = pad_id_for(vocab);
    IdBatch batch;
    batch.batch = rows;
    batch.seq = seq_len;
    std::vector<int32_t> last_idx;
    for (size_t r = 0; r < rows; ++r) {
        const NLIExample& ex = examples[order[first + r]];
        ClassifierRow row = encode_pair(vocab, ex, seq_len, pad);
        batch.ids.insert(batch.ids.end(), row.ids.begin(), row.ids.end());
        last_idx.push_back(row.last);
        if (labels_out) labels_out->push_back(static_cast<int32_t>(ex.label));
    }
    ForwardOptions opt;
    opt.task_adapters = &head.adapters;
    opt.invert_output = false;  // pooling, not the tied LM head
    Tensor hidden = forward_hidden(model, batch, opt);
    Tensor pooled = gather_rows(hidden, last_idx);
    return add_bias(matmul(pooled, head.cls_w), head.cls_b);
}

}  // namespace

void train_task_head(const Model& model, TaskHead& head, const BpeVocab& vocab,
                     const std::vector<NLIExample>& train_set, const TaskHyper& hyper,
                     uint64_t seed) {
    if (train_set.empty()) throw DataError("train_task_head: empty training set");
    if (head.cls_w.dim(0) != model.config.d_model) {
        throw ConfigError("train_task_head: head dimension does not match the model");
    }
    for (const auto& [name, t] : model.named()) {
        (void)name;
        t.set_requires_grad(false);
        t.drop_grad();
    }
    const auto head_tensors = head.named();
    for (const auto& [name, t] : head_tensors) {
        (void)name;
        t.set_requires_grad(true);
    }

    AdamW opt(AdamWConfig{});
    Rng rng(seed);
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int64_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Fisher-Yates with the run's rng keeps epochs deterministic.
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.uniform_index(i)]);
        }
        for (size_t first = 0; first < order.size(); first += hyper.batch_size) {
            const size_t rows = std::min(hyper.batch_size, order.size() - first);
            for (const auto& [name, t] : head_tensors) {
                (void)name;
                t.drop_grad();
            }
            std::vector<int32_t> labels;
            Tensor logits =
                classifier_logits(model, head, vocab, train_set, order, first, rows,
                                  hyper.seq_len, &labels);
            Tensor loss = cross_entropy_rows(logits, labels);
            if (!std::isfinite(loss.value())) {
                throw NumericError("train_task_head: non-finite loss");
            }
            backward(loss);
            opt.step(head_tensors, hyper.lr);
        }
    }
    for (const auto& [name, t] : head_tensors) {
        (void)name;
        t.set_requires_grad(false);
        t.drop_grad();
    }
}

std::vector<NliLabel> classify(const Model& model, const TaskHead& head, const BpeVocab& vocab,
                               const std::vector<NLIExample>& examples, size_t seq_len,
                               size_t batch_size) {
    if (head.cls_w.dim(0) != model.config.d_model) {
        throw ConfigError("classify: head dimension does not match the model");
    }
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<NliLabel> preds;
    for (size_t first = 0; first < examples.size(); first += batch_size) {
        const size_t rows = std::min(batch_size, examples.size() - first);
        Tensor logits = classifier_logits(model, head, vocab, examples, order, first, rows,
                                          seq_len, nullptr);
        for (size_t r = 0; r < rows; ++r) {
            const float* row = logits.data() + r * 3;
            size_t best = 0;
            for (size_t j = 1; j < 3; ++j) {
                if (row[j] > row[best]) best = j;
            }
            preds.push_back(static_cast<NliLabel>(best));
        }
    }
    return preds;
}

EvalReport evaluate_accuracy(const std::vector<NliLabel>& predictions,
                             const std::vector<NliLabel>& gold) {
    if (predictions.size() != gold.size()) {
        throw ContractError("evaluate_accuracy: prediction/gold length mismatch");
    }
    if (predictions.empty()) throw ContractError("evaluate_accuracy: empty evaluation");
    EvalReport report;
    report.total = predictions.size();
    size_t correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == gold[i]) ++correct;
        ++report.confusion[static_cast<size_t>(gold[i])][static_cast<size_t>(predictions[i])];
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.total);
    return report;
}

double cross_lingual_eval(const Model& target_model, const TaskHead& source_head,
                          const BpeVocab& target_vocab, const std::vector<NLIExample>& eval_set,
                          size_t seq_len, size_t batch_size) {
    if (source_head.cls_w.dim(0) != target_model.config.d_model) {
        throw ConfigError("cross_lingual_eval: task head dimension does not match the model");
    }
    const std::vector<NliLabel> preds =
        classify(target_model, source_head, target_vocab, eval_set, seq_len, batch_size);
    std::vector<NliLabel> gold;
    gold.reserve(eval_set.size());
    for (const auto& ex : eval_set) gold.push_back(ex.label);
    return evaluate_accuracy(preds, gold).accuracy;
}

}  // namespace langlab
