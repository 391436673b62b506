#include "langlab/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "langlab/error.hpp"

namespace langlab {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + value +
                          "'");
    }
    return out;
}

int64_t parse_i64(const std::string& key, const std::string& value) {
    int64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
    }
    return out;
}

double parse_f64(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config: " + key + " expects true/false, got '" + value + "'");
}

std::string resolve_path(const std::string& value, const std::string& base_dir) {
    fs::path p(value);
    if (p.is_relative()) p = fs::path(base_dir) / p;
    return p.lexically_normal().string();
}

std::vector<std::string> split_commas(const std::string& value) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream s(value);
    while (std::getline(s, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ScoreMode parse_score_mode(const std::string& value) {
    if (value == "full") return ScoreMode::MeanFullPrompt;
    if (value == "verbalizer") return ScoreMode::VerbalizerOnly;
    throw ConfigError("config: eval.score_mode expects full or verbalizer, got '" + value + "'");
}

}  // namespace

ExperimentConfig parse_experiment_text(const std::string& text, const std::string& base_dir,
                                       const ExperimentConfig& base) {
    ExperimentConfig cfg = base;
    const std::vector<std::string> inherited_specials = cfg.tokenizer.specials;
    cfg.tokenizer.specials.clear();  // a specials key in the file replaces, not appends
    bool specials_set = false;

    std::istringstream stream(text);
    std::string line;
    std::string section;
    size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": malformed section header");
            }
            section = line.substr(1, line.size() - 2);
            if (section != "model" && section != "tokenizer" && section != "data" &&
                section != "strategy" && section != "plan" && section != "eval") {
                throw ConfigError("config: unknown section [" + section + "]");
            }
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": key outside any section");
        }
        const std::string qual = section + "." + key;

        if (section == "model") {
            if (key == "n_layers") cfg.model.n_layers = parse_u64(qual, value);
            else if (key == "n_heads") cfg.model.n_heads = parse_u64(qual, value);
            else if (key == "d_model") cfg.model.d_model = parse_u64(qual, value);
            else if (key == "d_ffn") cfg.model.d_ffn = parse_u64(qual, value);
            else if (key == "vocab_size") cfg.model.vocab_size = parse_u64(qual, value);
            else if (key == "max_positions") cfg.model.max_positions = parse_u64(qual, value);
            else if (key == "seed") cfg.model.seed = parse_u64(qual, value);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "tokenizer") {
            if (key == "vocab_size") cfg.tokenizer.vocab_size = parse_u64(qual, value);
            else if (key == "specials") { cfg.tokenizer.specials = split_commas(value); specials_set = true; }
            else if (key == "whitespace_presplit") cfg.tokenizer.whitespace_presplit = parse_bool(qual, value);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "data") {
            if (key.rfind("corpus.", 0) == 0) {
                cfg.data.corpora[key.substr(7)] = resolve_path(value, base_dir);
            } else if (key.rfind("sampling.", 0) == 0) {
                cfg.data.sampling[key.substr(9)] = parse_f64(qual, value);
            } else if (key == "base_checkpoint") cfg.data.base_checkpoint = resolve_path(value, base_dir);
            else if (key == "adapt_corpus") cfg.data.adapt_corpus = resolve_path(value, base_dir);
            else if (key == "eval_corpus") cfg.data.eval_corpus = resolve_path(value, base_dir);
            else if (key == "vocab") cfg.data.vocab = resolve_path(value, base_dir);
            else if (key == "src_vocab") cfg.data.src_vocab = resolve_path(value, base_dir);
            else if (key == "nli_train") cfg.data.nli_train = resolve_path(value, base_dir);
            else if (key == "nli_test") cfg.data.nli_test = resolve_path(value, base_dir);
            else if (key == "src_nli_train") cfg.data.src_nli_train = resolve_path(value, base_dir);
            else if (key == "template") cfg.data.template_file = resolve_path(value, base_dir);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "strategy") {
            if (key == "name") cfg.strategy.strategy = parse_strategy(value);
            else if (key == "embeddings") cfg.strategy.embedding_set = parse_embedding_set(value);
            else if (key == "reduction") cfg.strategy.adapter_config.reduction = parse_u64(qual, value);
            else if (key == "inv_reduction") cfg.strategy.adapter_config.inv_reduction = parse_u64(qual, value);
            else if (key == "invertible") cfg.strategy.adapter_config.invertible = parse_bool(qual, value);
            else if (key == "language") cfg.strategy.adapter_config.language = parse_bool(qual, value);
            else throw ConfigError("config: unknown key " + qual);
        } else if (section == "plan") {
            if (key == "steps") cfg.plan.steps = parse_i64(qual, value);
            else if (key == "batch_size") cfg.plan.batch_size = parse_u64(qual, value);
            else if (key == "seq_len") cfg.plan.seq_len = parse_u64(qual, value);
            else if (key == "schedule") cfg.plan.schedule = parse_schedule(value);
            else if (key == "lr_peak") cfg.plan.lr_peak = parse_f64(qual, value);
            else if (key == "warmup_steps") cfg.plan.warmup_steps = parse_i64(qual, value);
            else if (key == "weight_decay") cfg.plan.optim.weight_decay = parse_f64(qual, value);
            else if (key == "clip_norm") cfg.plan.optim.clip_norm = parse_f64(qual, value);
            else if (key == "checkpoint_every") cfg.plan.checkpoint_every = parse_i64(qual, value);
            else if (key == "seed") cfg.plan.seed = parse_u64(qual, value);
            else throw ConfigError("config: unknown key " + qual);
        } else {  // eval
            if (key == "epochs") cfg.eval.epochs = parse_i64(qual, value);
            else if (key == "batch_size") cfg.eval.batch_size = parse_u64(qual, value);
            else if (key == "lr") cfg.eval.lr = parse_f64(qual, value);
            else if (key == "seq_len") cfg.eval.seq_len = parse_u64(qual, value);
            else if (key == "task_reduction") cfg.eval.task_reduction = parse_u64(qual, value);
            else if (key == "score_mode") cfg.eval.score_mode = parse_score_mode(value);
            else throw ConfigError("config: unknown key " + qual);
        }
    }
    if (!specials_set) cfg.tokenizer.specials = inherited_specials;
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path, const ExperimentConfig& base) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream text;
    text << f.rdbuf();
    const std::string dir = fs::absolute(fs::path(path)).parent_path().string();
    ExperimentConfig cfg = parse_experiment_text(text.str(), dir, base);
    validate_paths(cfg);
    return cfg;
}

std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "[model]\n";
    o << "n_layers = " << c.model.n_layers << "\n";
    o << "n_heads = " << c.model.n_heads << "\n";
    o << "d_model = " << c.model.d_model << "\n";
    o << "d_ffn = " << c.model.d_ffn << "\n";
    o << "vocab_size = " << c.model.vocab_size << "\n";
    o << "max_positions = " << c.model.max_positions << "\n";
    o << "seed = " << c.model.seed << "\n";
    o << "\n[tokenizer]\n";
    o << "vocab_size = " << c.tokenizer.vocab_size << "\n";
    o << "specials = ";
    for (size_t i = 0; i < c.tokenizer.specials.size(); ++i) {
        if (i) o << ",";
        o << c.tokenizer.specials[i];
    }
    o << "\n";
    o << "whitespace_presplit = " << (c.tokenizer.whitespace_presplit ? "true" : "false") << "\n";
    o << "\n[data]\n";
    for (const auto& [lang, path] : c.data.corpora) o << "corpus." << lang << " = " << path << "\n";
    for (const auto& [lang, p] : c.data.sampling) o << "sampling." << lang << " = " << fmt_f64(p) << "\n";
    auto emit = [&](const char* key, const std::string& v) {
        if (!v.empty()) o << key << " = " << v << "\n";
    };
    emit("base_checkpoint", c.data.base_checkpoint);
    emit("adapt_corpus", c.data.adapt_corpus);
    emit("eval_corpus", c.data.eval_corpus);
    emit("vocab", c.data.vocab);
    emit("src_vocab", c.data.src_vocab);
    emit("nli_train", c.data.nli_train);
    emit("nli_test", c.data.nli_test);
    emit("src_nli_train", c.data.src_nli_train);
    emit("template", c.data.template_file);
    o << "\n[strategy]\n";
    o << "name = " << strategy_name(c.strategy.strategy) << "\n";
    o << "embeddings = " << embedding_set_name(c.strategy.embedding_set) << "\n";
    o << "reduction = " << c.strategy.adapter_config.reduction << "\n";
    o << "inv_reduction = " << c.strategy.adapter_config.inv_reduction << "\n";
    o << "invertible = " << (c.strategy.adapter_config.invertible ? "true" : "false") << "\n";
    o << "language = " << (c.strategy.adapter_config.language ? "true" : "false") << "\n";
    o << "\n[plan]\n";
    o << "steps = " << c.plan.steps << "\n";
    o << "batch_size = " << c.plan.batch_size << "\n";
    o << "seq_len = " << c.plan.seq_len << "\n";
    o << "schedule = " << schedule_name(c.plan.schedule) << "\n";
    o << "lr_peak = " << fmt_f64(c.plan.lr_peak) << "\n";
    o << "warmup_steps = " << c.plan.warmup_steps << "\n";
    o << "weight_decay = " << fmt_f64(c.plan.optim.weight_decay) << "\n";
    o << "clip_norm = " << fmt_f64(c.plan.optim.clip_norm) << "\n";
    o << "checkpoint_every = " << c.plan.checkpoint_every << "\n";
    o << "seed = " << c.plan.seed << "\n";
    o << "\n[eval]\n";
    o << "epochs = " << c.eval.epochs << "\n";
    o << "batch_size = " << c.eval.batch_size << "\n";
    o << "lr = " << fmt_f64(c.eval.lr) << "\n";
    o << "seq_len = " << c.eval.seq_len << "\n";
    o << "task_reduction = " << c.eval.task_reduction << "\n";
    o << "score_mode = "
      << (c.eval.score_mode == ScoreMode::MeanFullPrompt ? "full" : "verbalizer") << "\n";
    return o.str();
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string s = serialize_config(config);
    const uint64_t h = fnv1a64(s.data(), s.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void validate_paths(const ExperimentConfig& c) {
    auto check = [](const std::string& what, const std::string& path) {
        if (!path.empty() && !fs::exists(path)) {
            throw ConfigError("config: " + what + " path does not exist: '" + path + "'");
        }
    };
    for (const auto& [lang, path] : c.data.corpora) check("data.corpus." + lang, path);
    check("data.base_checkpoint", c.data.base_checkpoint);
    check("data.adapt_corpus", c.data.adapt_corpus);
    check("data.eval_corpus", c.data.eval_corpus);
    check("data.vocab", c.data.vocab);
    check("data.src_vocab", c.data.src_vocab);
    check("data.nli_train", c.data.nli_train);
    check("data.nli_test", c.data.nli_test);
    check("data.src_nli_train", c.data.src_nli_train);
    check("data.template", c.data.template_file);
    for (const auto& [lang, p] : c.data.sampling) {
        if (!c.data.corpora.count(lang)) {
            throw ConfigError("config: sampling." + lang + " has no matching corpus." + lang);
        }
        if (p < 0.0) throw ConfigError("config: sampling." + lang + " is negative");
    }
}

}  // namespace langlab
