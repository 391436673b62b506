#include "langlab/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "langlab/checkpoint.hpp"
#include "langlab/config.hpp"
#include "langlab/error.hpp"
#include "langlab/eval.hpp"
#include "langlab/train.hpp"

namespace langlab {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// small helpers

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open file '" + path + "'");
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::vector<std::string> read_lines(const std::string& path) {
    const std::string text = read_text_file(path);
    std::vector<std::string> lines;
    std::string cur;
    std::istringstream s(text);
    while (std::getline(s, cur)) {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        if (!cur.empty()) lines.push_back(cur);
    }
    return lines;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file '" + path + "'");
    f << text;
}

std::string fmt_acc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// A missing input path is a usage error (exit 2), not a runtime failure.
void require_exists(const std::string& what, const std::string& path) {
    if (!path.empty() && !fs::exists(path)) {
        throw ConfigError(what + " '" + path + "' does not exist");
    }
}

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

// runs/<hash8>-<timestamp>/ with an `.incomplete` marker that is removed only
// when the run finishes; interrupted runs stay visibly flagged.
struct RunDir {
    std::string path;

    static RunDir create(const std::string& runs_root, const std::string& hash) {
        fs::create_directories(runs_root);
        std::string base = runs_root + "/" + hash.substr(0, 8) + "-" + timestamp_now();
        std::string dir = base;
        for (int n = 1; fs::exists(dir); ++n) dir = base + "-" + std::to_string(n);
        fs::create_directories(dir);
        return use(dir);
    }

    // Uses an explicit directory as the run directory.
    static RunDir use(const std::string& dir) {
        fs::create_directories(dir);
        write_text_file(dir + "/.incomplete", "");
        return RunDir{dir};
    }

    void write_config(const ExperimentConfig& cfg) const {
        write_text_file(path + "/config", serialize_config(cfg));
    }

    void append_log(const std::string& line) const {
        std::ofstream f(path + "/log", std::ios::binary | std::ios::app);
        f << line << "\n";
    }

    void log_steps(const std::vector<StepLog>& steps) const {
        std::ofstream f(path + "/log", std::ios::binary | std::ios::app);
        for (const auto& s : steps) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "step\t%lld\t%.6f\t%.8g",
                          static_cast<long long>(s.step), s.loss, s.lr);
            f << buf << "\n";
        }
    }

    void finish() const { fs::remove(path + "/.incomplete"); }
};

// ---------------------------------------------------------------------------
// presets: `paper` carries the published hyperparameters, `desk` the scaled
// laptop-sized ones used by the end-to-end tests.

void apply_pretrain_preset(ExperimentConfig& cfg, const std::string& name) {
    if (name == "paper") {
        cfg.model.n_layers = 24;
        cfg.model.n_heads = 16;
        cfg.model.d_model = 2048;
        cfg.model.d_ffn = 8192;
        cfg.model.vocab_size = 130000;
        cfg.model.max_positions = 1024;
        cfg.tokenizer.vocab_size = 130000;
        cfg.plan.steps = 118500;
        cfg.plan.batch_size = 512;
        cfg.plan.seq_len = 1024;
        cfg.plan.schedule = ScheduleKind::CosineWithWarmup;
        cfg.plan.lr_peak = 2e-4;
        cfg.plan.warmup_steps = 422;
        cfg.plan.optim.weight_decay = 0.1;
        cfg.plan.optim.clip_norm = 1.0;
        cfg.plan.checkpoint_every = 1500;
    } else if (name == "desk") {
        cfg.model = ModelConfig{};
        cfg.tokenizer.vocab_size = 512;
        cfg.plan.steps = 2000;
        cfg.plan.batch_size = 16;
        cfg.plan.seq_len = 64;
        cfg.plan.schedule = ScheduleKind::CosineWithWarmup;
        cfg.plan.lr_peak = 1e-3;
        cfg.plan.warmup_steps = 20;
        cfg.plan.optim.weight_decay = 0.1;
        cfg.plan.optim.clip_norm = 1.0;
        cfg.plan.checkpoint_every = 500;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
    }
}

void apply_adapt_preset(ExperimentConfig& cfg, const std::string& name) {
    if (name == "paper") {
        cfg.plan.steps = 50000;
        cfg.plan.batch_size = 8;
        cfg.plan.seq_len = 1024;
        cfg.plan.schedule = ScheduleKind::LinearDecay;
        cfg.plan.lr_peak = 1e-3;
        cfg.plan.warmup_steps = 0;
        cfg.plan.optim.weight_decay = 0.01;
        cfg.plan.optim.clip_norm = 1.0;
        cfg.plan.checkpoint_every = 0;
        cfg.eval = EvalConfig{};  // epochs 2, batch 32, lr 5e-5, seq 128, r 16
    } else if (name == "desk") {
        cfg.plan.steps = 500;
        cfg.plan.batch_size = 8;
        cfg.plan.seq_len = 64;
        cfg.plan.schedule = ScheduleKind::LinearDecay;
        cfg.plan.lr_peak = 1e-2;
        cfg.plan.warmup_steps = 0;
        cfg.plan.optim.weight_decay = 0.01;
        cfg.plan.optim.clip_norm = 1.0;
        cfg.plan.checkpoint_every = 0;
        cfg.eval.epochs = 4;
        cfg.eval.batch_size = 8;
        cfg.eval.lr = 1e-2;
        cfg.eval.seq_len = 64;
        cfg.eval.task_reduction = 16;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
    }
}

// ---------------------------------------------------------------------------
// shared pipeline pieces

struct CorpusTokens {
    std::vector<int32_t> tokens;
    size_t bytes = 0;
};

CorpusTokens load_corpus_tokens(const BpeVocab& vocab, const std::string& path) {
    const std::string text = read_text_file(path);
    CorpusTokens out;
    out.bytes = text.size();
    out.tokens = encode(vocab, text);
    return out;
}

SamplingTable sampling_for(const ExperimentConfig& cfg) {
    SamplingTable table;
    if (cfg.data.sampling.empty()) {
        const double p = 1.0 / static_cast<double>(cfg.data.corpora.size());
        for (const auto& [lang, _] : cfg.data.corpora) table.entries.emplace_back(lang, p);
        // exact unit sum regardless of division rounding
        double acc = 0.0;
        for (size_t i = 0; i + 1 < table.entries.size(); ++i) acc += table.entries[i].second;
        if (!table.entries.empty()) table.entries.back().second = 1.0 - acc;
    } else {
        for (const auto& [lang, p] : cfg.data.sampling) {
            if (!cfg.data.corpora.count(lang)) {
                throw ConfigError("sampling." + lang + " has no matching corpus");
            }
            table.entries.emplace_back(lang, p);
        }
        for (const auto& [lang, _] : cfg.data.corpora) {
            if (!cfg.data.sampling.count(lang)) {
                throw ConfigError("corpus." + lang + " has no sampling probability");
            }
        }
    }
    table.validate();
    return table;
}

struct TaskTrainInputs {
    TaskHyper hyper;
    uint64_t seed = 0;
};

TaskHyper hyper_from(const EvalConfig& e) {
    TaskHyper h;
    h.epochs = e.epochs;
    h.batch_size = e.batch_size;
    h.lr = e.lr;
    h.seq_len = e.seq_len;
    return h;
}

double supervised_accuracy(const Model& model, const BpeVocab& vocab,
                           const std::vector<NLIExample>& train_set,
                           const std::vector<NLIExample>& test_set, const EvalConfig& eval_cfg,
                           uint64_t seed) {
    TaskHead head = build_task_head(model.config.d_model, model.config.n_layers,
                                    eval_cfg.task_reduction, seed);
    train_task_head(model, head, vocab, train_set, hyper_from(eval_cfg), seed);
    const auto preds =
        classify(model, head, vocab, test_set, eval_cfg.seq_len, eval_cfg.batch_size);
    std::vector<NliLabel> gold;
    gold.reserve(test_set.size());
    for (const auto& ex : test_set) gold.push_back(ex.label);
    return evaluate_accuracy(preds, gold).accuracy;
}

double zeroshot_accuracy(const Model& model, const BpeVocab& vocab, const PromptTemplate& tpl,
                         const std::vector<NLIExample>& test_set, ScoreMode mode) {
    std::vector<NliLabel> preds, gold;
    preds.reserve(test_set.size());
    gold.reserve(test_set.size());
    for (const auto& ex : test_set) {
        preds.push_back(zero_shot_predict(model, vocab, tpl, ex, mode).prediction);
        gold.push_back(ex.label);
    }
    return evaluate_accuracy(preds, gold).accuracy;
}

double crosslingual_accuracy(const std::string& base_ckpt, const Model& target_model,
                             const BpeVocab& target_vocab, const std::string& src_vocab_path,
                             const std::vector<NLIExample>& src_train,
                             const std::vector<NLIExample>& test_set, const EvalConfig& eval_cfg,
                             uint64_t seed) {
    const LoadedCheckpoint base = load_checkpoint(base_ckpt);
    const BpeVocab src_vocab = load_vocab(src_vocab_path);
    if (base.model.config.d_model != target_model.config.d_model ||
        base.model.config.n_layers != target_model.config.n_layers) {
        throw ConfigError("cross-lingual eval needs matching architectures (d_model/n_layers)");
    }
    TaskHead head = build_task_head(base.model.config.d_model, base.model.config.n_layers,
                                    eval_cfg.task_reduction, seed);
    train_task_head(base.model, head, src_vocab, src_train, hyper_from(eval_cfg), seed);
    return cross_lingual_eval(target_model, head, target_vocab, test_set, eval_cfg.seq_len,
                              eval_cfg.batch_size);
}

// ---------------------------------------------------------------------------
// one grid run: adapt, then whichever of the three evaluations the config
// provides data for. Missing inputs leave "-" cells; failures leave "ERROR".

struct GridRow {
    std::string strategy;
    std::string ckpt_step = "ERROR";
    std::string emb_set;
    std::string reduction;
    std::string zeroshot = "ERROR";
    std::string crosslingual = "ERROR";
    std::string supervised = "ERROR";

    std::string tsv() const {
        return strategy + "\t" + ckpt_step + "\t" + emb_set + "\t" + reduction + "\t" + zeroshot +
               "\t" + crosslingual + "\t" + supervised;
    }
    static std::string header() {
        return "strategy\tckpt_step\temb_set\treduction\tzeroshot_acc\tcrosslingual_acc\t"
               "supervised_acc";
    }
};

GridRow run_experiment(const ExperimentConfig& cfg, const std::string& runs_root) {
    GridRow row;
    row.strategy = strategy_name(cfg.strategy.strategy);
    row.emb_set = embedding_set_name(cfg.strategy.embedding_set);
    row.reduction = std::to_string(cfg.strategy.adapter_config.reduction);

    const RunDir run = RunDir::create(runs_root, config_hash(cfg));
    run.write_config(cfg);

    if (cfg.data.base_checkpoint.empty() || cfg.data.vocab.empty() ||
        cfg.data.adapt_corpus.empty()) {
        throw ConfigError("grid run needs data.base_checkpoint, data.vocab, data.adapt_corpus");
    }

    const BpeVocab vocab = load_vocab(cfg.data.vocab);
    const CorpusTokens corpus = load_corpus_tokens(vocab, cfg.data.adapt_corpus);
    const AdaptResult adapted = adapt(cfg.data.base_checkpoint, vocab, corpus.tokens,
                                      cfg.strategy, cfg.plan, run.path + "/checkpoints/adapted",
                                      "target");
    row.ckpt_step = std::to_string(adapted.base_step);
    run.log_steps(adapted.steps);
    run.append_log("adapted\t" + adapted.checkpoint_dir);

    const std::vector<NLIExample> test_set =
        cfg.data.nli_test.empty() ? std::vector<NLIExample>{} : load_nli_tsv(cfg.data.nli_test);

    if (!cfg.data.template_file.empty() && !test_set.empty()) {
        try {
            const PromptTemplate tpl = load_template(cfg.data.template_file);
            row.zeroshot = fmt_acc(
                zeroshot_accuracy(adapted.model, vocab, tpl, test_set, cfg.eval.score_mode));
        } catch (const std::exception& e) {
            run.append_log(std::string("zeroshot ERROR\t") + e.what());
        }
    } else {
        row.zeroshot = "-";
    }

    if (!cfg.data.src_vocab.empty() && !cfg.data.src_nli_train.empty() && !test_set.empty()) {
        try {
            const auto src_train = load_nli_tsv(cfg.data.src_nli_train);
            row.crosslingual = fmt_acc(crosslingual_accuracy(
                cfg.data.base_checkpoint, adapted.model, vocab, cfg.data.src_vocab, src_train,
                test_set, cfg.eval, cfg.plan.seed));
        } catch (const std::exception& e) {
            run.append_log(std::string("crosslingual ERROR\t") + e.what());
        }
    } else {
        row.crosslingual = "-";
    }

    if (!cfg.data.nli_train.empty() && !test_set.empty()) {
        try {
            const auto train_set = load_nli_tsv(cfg.data.nli_train);
            row.supervised = fmt_acc(supervised_accuracy(adapted.model, vocab, train_set,
                                                         test_set, cfg.eval, cfg.plan.seed));
        } catch (const std::exception& e) {
            run.append_log(std::string("supervised ERROR\t") + e.what());
        }
    } else {
        row.supervised = "-";
    }

    write_text_file(run.path + "/results.tsv", GridRow::header() + "\n" + row.tsv() + "\n");
    run.finish();
    return row;
}

// ---------------------------------------------------------------------------
// subcommand wiring

struct CliState {
    // train-tokenizer
    std::vector<std::string> tok_corpora;
    size_t tok_vocab = 512;
    std::string tok_specials;
    bool tok_presplit = false;
    std::string tok_out;

    // shared
    std::string config_path;
    std::string preset;
    std::string runs_root = "runs";
    std::string out;
    uint64_t seed = 0;
    bool seed_given = false;

    // adapt
    std::string base_ckpt;
    std::string strategy;
    std::string embeddings;
    int64_t reduction = -1;
    int64_t inv_reduction = -1;
    int64_t steps = -1;
    std::string vocab_path;
    std::string corpus_path;
    std::string language = "target";

    // eval
    std::string checkpoint;
    std::string template_path;
    std::string data_path;
    std::string score_mode = "full";
    std::string train_path;
    std::string test_path;
    std::string target_ckpt;
    std::string src_vocab_path;
    std::string src_train_path;
    int64_t epochs = -1;
    int64_t batch_size = -1;
    double lr = -1.0;
    int64_t seq_len = -1;

    // grid
    std::string grid_path;
};

ScoreMode score_mode_from(const std::string& name) {
    if (name == "full") return ScoreMode::MeanFullPrompt;
    if (name == "verbalizer") return ScoreMode::VerbalizerOnly;
    throw ConfigError("unknown score mode '" + name + "' (expected full or verbalizer)");
}

std::vector<std::string> parse_specials_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream s(csv);
    while (std::getline(s, cur, ',')) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

int cmd_train_tokenizer(const CliState& st) {
    std::vector<std::string> docs;
    for (const auto& path : st.tok_corpora) {
        auto lines = read_lines(path);
        docs.insert(docs.end(), lines.begin(), lines.end());
    }
    BpeTrainOptions opts;
    opts.whitespace_presplit = st.tok_presplit;
    const BpeVocab vocab =
        train_bpe(docs, st.tok_vocab, parse_specials_csv(st.tok_specials), opts);
    save_vocab(vocab, st.tok_out);
    std::cout << "vocab\t" << st.tok_out << "\n";
    std::cout << "merges\t" << vocab.merges.size() << "\n";
    std::cout << "vocab_size\t" << vocab.vocab_size() << "\n";
    return 0;
}

int cmd_pretrain(CliState& st) {
    ExperimentConfig base;
    if (!st.preset.empty()) apply_pretrain_preset(base, st.preset);
    ExperimentConfig cfg =
        st.config_path.empty() ? base : parse_experiment_config(st.config_path, base);
    if (st.seed_given) {
        cfg.model.seed = st.seed;
        cfg.plan.seed = st.seed;
    }
    if (cfg.data.corpora.empty()) {
        throw ConfigError("pretrain needs at least one data.corpus.<lang> entry");
    }

    const RunDir run = st.out.empty() ? RunDir::create(st.runs_root, config_hash(cfg))
                                      : RunDir::use(st.out);

    BpeVocab vocab;
    if (!cfg.data.vocab.empty()) {
        vocab = load_vocab(cfg.data.vocab);
    } else {
        std::vector<std::string> docs;
        for (const auto& [lang, path] : cfg.data.corpora) {
            auto lines = read_lines(path);
            docs.insert(docs.end(), lines.begin(), lines.end());
        }
        BpeTrainOptions opts;
        opts.whitespace_presplit = cfg.tokenizer.whitespace_presplit;
        vocab = train_bpe(docs, cfg.tokenizer.vocab_size, cfg.tokenizer.specials, opts);
        save_vocab(vocab, run.path + "/vocab.bpe");
        std::cout << "vocab\t" << run.path << "/vocab.bpe\n";
    }
    if (cfg.model.vocab_size != vocab.vocab_size()) {
        run.append_log("vocab_size adjusted\t" + std::to_string(cfg.model.vocab_size) + " -> " +
                       std::to_string(vocab.vocab_size()));
        cfg.model.vocab_size = vocab.vocab_size();
    }
    run.write_config(cfg);

    std::map<std::string, std::vector<int32_t>> corpora;
    for (const auto& [lang, path] : cfg.data.corpora) {
        corpora[lang] = load_corpus_tokens(vocab, path).tokens;
    }

    Model model = build_model(cfg.model);
    const TrainSummary summary =
        pretrain(model, corpora, sampling_for(cfg), cfg.plan, run.path + "/checkpoints");
    run.log_steps(summary.steps);
    run.finish();

    std::cout << "run_dir\t" << run.path << "\n";
    std::cout << "checkpoint\t" << summary.final_checkpoint << "\n";
    if (!summary.steps.empty()) {
        std::cout << "final_loss\t" << summary.steps.back().loss << "\n";
    }
    return 0;
}

int cmd_adapt(CliState& st) {
    ExperimentConfig base;
    if (!st.preset.empty()) apply_adapt_preset(base, st.preset);
    ExperimentConfig cfg =
        st.config_path.empty() ? base : parse_experiment_config(st.config_path, base);

    if (!st.base_ckpt.empty()) cfg.data.base_checkpoint = st.base_ckpt;
    if (!st.vocab_path.empty()) cfg.data.vocab = st.vocab_path;
    if (!st.corpus_path.empty()) cfg.data.adapt_corpus = st.corpus_path;
    if (!st.strategy.empty()) cfg.strategy.strategy = parse_strategy(st.strategy);
    if (!st.embeddings.empty()) cfg.strategy.embedding_set = parse_embedding_set(st.embeddings);
    if (st.reduction >= 0) cfg.strategy.adapter_config.reduction = st.reduction;
    if (st.inv_reduction >= 0) cfg.strategy.adapter_config.inv_reduction = st.inv_reduction;
    if (st.steps >= 0) cfg.plan.steps = st.steps;
    if (st.seed_given) cfg.plan.seed = st.seed;

    if (cfg.data.base_checkpoint.empty()) throw ConfigError("adapt needs --base");
    if (cfg.data.vocab.empty()) throw ConfigError("adapt needs --vocab (or data.vocab)");
    if (cfg.data.adapt_corpus.empty()) {
        throw ConfigError("adapt needs --corpus (or data.adapt_corpus)");
    }
    require_exists("base checkpoint", cfg.data.base_checkpoint);
    require_exists("vocab file", cfg.data.vocab);
    require_exists("corpus file", cfg.data.adapt_corpus);

    const RunDir run = st.out.empty() ? RunDir::create(st.runs_root, config_hash(cfg))
                                      : RunDir::use(st.out);
    run.write_config(cfg);

    const BpeVocab vocab = load_vocab(cfg.data.vocab);
    const CorpusTokens corpus = load_corpus_tokens(vocab, cfg.data.adapt_corpus);
    const std::string ckpt_dir = run.path + "/checkpoints/adapted";
    const AdaptResult result = adapt(cfg.data.base_checkpoint, vocab, corpus.tokens,
                                     cfg.strategy, cfg.plan, ckpt_dir, st.language);
    run.log_steps(result.steps);
    run.finish();

    std::cout << "run_dir\t" << run.path << "\n";
    std::cout << "checkpoint\t" << result.checkpoint_dir << "\n";
    std::cout << "base_step\t" << result.base_step << "\n";
    if (!result.steps.empty()) {
        std::cout << "final_loss\t" << result.steps.back().loss << "\n";
    }
    return 0;
}

EvalConfig eval_overrides(const CliState& st, EvalConfig e) {
    if (st.epochs >= 0) e.epochs = st.epochs;
    if (st.batch_size >= 0) e.batch_size = st.batch_size;
    if (st.lr >= 0) e.lr = st.lr;
    if (st.seq_len >= 0) e.seq_len = st.seq_len;
    if (st.reduction >= 0) e.task_reduction = st.reduction;
    return e;
}

int cmd_eval_zeroshot(const CliState& st) {
    require_exists("checkpoint", st.checkpoint);
    require_exists("vocab file", st.vocab_path);
    require_exists("template file", st.template_path);
    require_exists("data file", st.data_path);
    const LoadedCheckpoint ckpt = load_checkpoint(st.checkpoint);
    const BpeVocab vocab = load_vocab(st.vocab_path);
    const PromptTemplate tpl = load_template(st.template_path);
    const auto test_set = load_nli_tsv(st.data_path);
    const double acc =
        zeroshot_accuracy(ckpt.model, vocab, tpl, test_set, score_mode_from(st.score_mode));
    std::cout << "accuracy\t" << fmt_acc(acc) << "\n";
    std::cout << "examples\t" << test_set.size() << "\n";
    return 0;
}

int cmd_eval_supervised(CliState& st) {
    ExperimentConfig base;
    if (!st.preset.empty()) apply_adapt_preset(base, st.preset);
    const EvalConfig eval_cfg = eval_overrides(st, base.eval);
    require_exists("checkpoint", st.checkpoint);
    require_exists("vocab file", st.vocab_path);
    require_exists("training data", st.train_path);
    require_exists("test data", st.test_path);
    const LoadedCheckpoint ckpt = load_checkpoint(st.checkpoint);
    const BpeVocab vocab = load_vocab(st.vocab_path);
    const auto train_set = load_nli_tsv(st.train_path);
    const auto test_set = load_nli_tsv(st.test_path);
    const double acc = supervised_accuracy(ckpt.model, vocab, train_set, test_set, eval_cfg,
                                           st.seed_given ? st.seed : 0);
    std::cout << "accuracy\t" << fmt_acc(acc) << "\n";
    std::cout << "examples\t" << test_set.size() << "\n";
    return 0;
}

int cmd_eval_crosslingual(CliState& st) {
    ExperimentConfig base;
    if (!st.preset.empty()) apply_adapt_preset(base, st.preset);
    const EvalConfig eval_cfg = eval_overrides(st, base.eval);
    require_exists("base checkpoint", st.base_ckpt);
    require_exists("target checkpoint", st.target_ckpt);
    require_exists("source vocab file", st.src_vocab_path);
    require_exists("target vocab file", st.vocab_path);
    require_exists("source training data", st.src_train_path);
    require_exists("test data", st.test_path);
    const LoadedCheckpoint target = load_checkpoint(st.target_ckpt);
    const BpeVocab target_vocab = load_vocab(st.vocab_path);
    const auto src_train = load_nli_tsv(st.src_train_path);
    const auto test_set = load_nli_tsv(st.test_path);
    const double acc =
        crosslingual_accuracy(st.base_ckpt, target.model, target_vocab, st.src_vocab_path,
                              src_train, test_set, eval_cfg, st.seed_given ? st.seed : 0);
    std::cout << "accuracy\t" << fmt_acc(acc) << "\n";
    std::cout << "examples\t" << test_set.size() << "\n";
    return 0;
}

int cmd_params(CliState& st) {
    Model model = [&] {
        if (!st.checkpoint.empty()) return load_checkpoint(st.checkpoint).model;
        if (st.config_path.empty()) throw ConfigError("params needs --checkpoint or --config");
        return build_model(parse_experiment_config(st.config_path).model);
    }();

    StrategySpec spec;
    const bool with_spec = !st.strategy.empty();
    if (with_spec) {
        spec.strategy = parse_strategy(st.strategy);
        if (!st.embeddings.empty()) spec.embedding_set = parse_embedding_set(st.embeddings);
        if (st.reduction >= 0) spec.adapter_config.reduction = st.reduction;
        if (st.inv_reduction >= 0) spec.adapter_config.inv_reduction = st.inv_reduction;
        const bool needs_adapters = spec.strategy != Strategy::EmbOnly;
        if (needs_adapters && !model.adapters.has_value()) {
            inject_adapters(model, spec.adapter_config, 0);
        }
    }

    const ParamCounts counts = count_params(model, with_spec ? &spec : nullptr);
    std::cout << "total\t" << counts.total << "\n";
    std::cout << "trainable\t" << counts.trainable << "\n";
    for (const auto& [group, n] : counts.by_group) {
        std::cout << "group." << group << "\t" << n << "\n";
    }
    return 0;
}

int cmd_grid(CliState& st) {
    ExperimentConfig base;
    if (!st.preset.empty()) apply_adapt_preset(base, st.preset);

    std::vector<std::string> config_paths;
    for (const auto& line : read_lines(st.grid_path)) {
        if (line[0] == '#') continue;
        config_paths.push_back(line);
    }
    if (config_paths.empty()) throw ConfigError("grid file lists no configs");

    std::vector<ExperimentConfig> configs;
    std::map<std::string, size_t> seen;  // hash -> 1-based position
    for (size_t i = 0; i < config_paths.size(); ++i) {
        ExperimentConfig cfg = parse_experiment_config(config_paths[i], base);
        if (st.seed_given) cfg.plan.seed = st.seed;
        const std::string hash = config_hash(cfg);
        if (const auto it = seen.find(hash); it != seen.end()) {
            throw ConfigError("duplicate run id: configs " + std::to_string(it->second) +
                              " and " + std::to_string(i + 1) + " hash to " + hash);
        }
        seen[hash] = i + 1;
        configs.push_back(std::move(cfg));
    }

    const std::string out = st.out.empty() ? "grid-results.tsv" : st.out;
    std::ofstream tsv(out, std::ios::binary);
    if (!tsv) throw DataError("cannot write '" + out + "'");
    tsv << GridRow::header() << "\n";
    tsv.flush();

    for (size_t i = 0; i < configs.size(); ++i) {
        GridRow row;
        try {
            row = run_experiment(configs[i], st.runs_root);
        } catch (const std::exception& e) {
            row.strategy = strategy_name(configs[i].strategy.strategy);
            row.emb_set = embedding_set_name(configs[i].strategy.embedding_set);
            row.reduction = std::to_string(configs[i].strategy.adapter_config.reduction);
            std::cerr << "error: run " << (i + 1) << ": " << e.what() << "\n";
        }
        tsv << row.tsv() << "\n";
        tsv.flush();
        std::cout << "run\t" << (i + 1) << "/" << configs.size() << "\t" << row.strategy << "\n";
    }
    std::cout << "results\t" << out << "\n";
    return 0;
}

}  // namespace

int run_command(int argc, const char* const* argv) {
    CliState st;
    CLI::App app{"Language-adaptation laboratory for small causal language models"};
    app.require_subcommand(1);

    auto* tok = app.add_subcommand("train-tokenizer", "Learn a byte-level BPE vocabulary");
    tok->add_option("--corpus", st.tok_corpora, "Corpus file (repeatable; one document per line)")
        ->required();
    tok->add_option("--vocab", st.tok_vocab, "Target vocabulary size (bytes + merges + specials)");
    tok->add_option("--specials", st.tok_specials, "Comma-separated special tokens");
    tok->add_flag("--presplit", st.tok_presplit, "Whitespace pre-splitting for merge counts");
    tok->add_option("--out", st.tok_out, "Output vocab file")->required();

    auto* pre = app.add_subcommand("pretrain", "Pretrain a causal LM on multilingual corpora");
    pre->add_option("--config", st.config_path, "Experiment config file")->required();
    pre->add_option("--preset", st.preset, "paper|desk hyperparameter preset");
    pre->add_option("--seed", st.seed, "Overrides model and plan seeds");
    pre->add_option("--out", st.out, "Run directory (default runs/<hash>-<time>)");
    pre->add_option("--runs-root", st.runs_root, "Root for generated run directories");

    auto* ad = app.add_subcommand("adapt", "Adapt a pretrained checkpoint to a new language");
    ad->add_option("--base", st.base_ckpt, "Base checkpoint directory");
    ad->add_option("--config", st.config_path, "Experiment config file");
    ad->add_option("--preset", st.preset, "paper|desk hyperparameter preset");
    ad->add_option("--strategy", st.strategy, "emb-only|emb-then-adpt|emb-and-adpt");
    ad->add_option("--embeddings", st.embeddings, "wte or wte,wpe");
    ad->add_option("--reduction", st.reduction, "Bottleneck reduction factor");
    ad->add_option("--inv-reduction", st.inv_reduction, "Invertible-adapter reduction factor");
    ad->add_option("--steps", st.steps, "Total adaptation steps");
    ad->add_option("--vocab", st.vocab_path, "Target-language vocab file");
    ad->add_option("--corpus", st.corpus_path, "Target-language corpus file");
    ad->add_option("--language", st.language, "Language tag stored with the adapters");
    ad->add_option("--seed", st.seed, "Overrides the plan seed");
    ad->add_option("--out", st.out, "Run directory (default runs/<hash>-<time>)");
    ad->add_option("--runs-root", st.runs_root, "Root for generated run directories");

    auto* zs = app.add_subcommand("eval-zeroshot", "Prompt-based zero-shot NLI accuracy");
    zs->add_option("--checkpoint", st.checkpoint, "Checkpoint directory")->required();
    zs->add_option("--vocab", st.vocab_path, "Vocab file")->required();
    zs->add_option("--template", st.template_path, "Prompt template file")->required();
    zs->add_option("--data", st.data_path, "NLI TSV (premise, hypothesis, label)")->required();
    zs->add_option("--score-mode", st.score_mode, "full|verbalizer");

    auto* sup = app.add_subcommand("eval-supervised", "Supervised NLI finetuning accuracy");
    sup->add_option("--checkpoint", st.checkpoint, "Checkpoint directory")->required();
    sup->add_option("--vocab", st.vocab_path, "Vocab file")->required();
    sup->add_option("--train", st.train_path, "Training NLI TSV")->required();
    sup->add_option("--test", st.test_path, "Test NLI TSV")->required();
    sup->add_option("--preset", st.preset, "paper|desk eval preset");
    sup->add_option("--epochs", st.epochs, "Finetuning epochs");
    sup->add_option("--batch-size", st.batch_size, "Finetuning batch size");
    sup->add_option("--lr", st.lr, "Finetuning learning rate");
    sup->add_option("--seq-len", st.seq_len, "Maximum encoded pair length");
    sup->add_option("--reduction", st.reduction, "Task-adapter reduction factor");
    sup->add_option("--seed", st.seed, "Task head init and batch order seed");

    auto* xl = app.add_subcommand("eval-crosslingual",
                                  "Transfer a source-trained task head to an adapted model");
    xl->add_option("--base", st.base_ckpt, "Source (base) checkpoint directory")->required();
    xl->add_option("--target", st.target_ckpt, "Adapted target checkpoint directory")->required();
    xl->add_option("--src-vocab", st.src_vocab_path, "Source-language vocab file")->required();
    xl->add_option("--vocab", st.vocab_path, "Target-language vocab file")->required();
    xl->add_option("--src-train", st.src_train_path, "Source-language training NLI TSV")
        ->required();
    xl->add_option("--test", st.test_path, "Target-language test NLI TSV")->required();
    xl->add_option("--preset", st.preset, "paper|desk eval preset");
    xl->add_option("--epochs", st.epochs, "Finetuning epochs");
    xl->add_option("--batch-size", st.batch_size, "Finetuning batch size");
    xl->add_option("--lr", st.lr, "Finetuning learning rate");
    xl->add_option("--seq-len", st.seq_len, "Maximum encoded pair length");
    xl->add_option("--reduction", st.reduction, "Task-adapter reduction factor");
    xl->add_option("--seed", st.seed, "Task head init and batch order seed");

    auto* par = app.add_subcommand("params", "Trainable/total parameter accounting");
    par->add_option("--checkpoint", st.checkpoint, "Checkpoint directory");
    par->add_option("--config", st.config_path, "Experiment config file (builds the model)");
    par->add_option("--strategy", st.strategy, "emb-only|emb-then-adpt|emb-and-adpt");
    par->add_option("--embeddings", st.embeddings, "wte or wte,wpe");
    par->add_option("--reduction", st.reduction, "Bottleneck reduction factor");
    par->add_option("--inv-reduction", st.inv_reduction, "Invertible-adapter reduction factor");

    auto* grid = app.add_subcommand("grid", "Run a list of experiment configs, one TSV row each");
    grid->add_option("--grid", st.grid_path, "File listing one config path per line")->required();
    grid->add_option("--out", st.out, "Results TSV path (default grid-results.tsv)");
    grid->add_option("--preset", st.preset, "paper|desk base preset under every config");
    grid->add_option("--seed", st.seed, "Overrides every run's plan seed");
    grid->add_option("--runs-root", st.runs_root, "Root for generated run directories");

    try {
        app.parse(argc, argv);
        for (const auto* sub : {pre, ad, sup, xl, grid}) {
            if (sub->parsed() && sub->count("--seed") > 0) st.seed_given = true;
        }
        if (tok->parsed()) return cmd_train_tokenizer(st);
        if (pre->parsed()) return cmd_pretrain(st);
        if (ad->parsed()) return cmd_adapt(st);
        if (zs->parsed()) return cmd_eval_zeroshot(st);
        if (sup->parsed()) return cmd_eval_supervised(st);
        if (xl->parsed()) return cmd_eval_crosslingual(st);
        if (par->parsed()) return cmd_params(st);
        if (grid->parsed()) return cmd_grid(st);
        throw ConfigError("no subcommand given");
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace langlab
