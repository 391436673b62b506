// Prompt templates, zero-shot scoring, supervised heads, and transfer eval.

#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "langlab/bpe.hpp"
#include "langlab/error.hpp"
#include "langlab/eval.hpp"
#include "langlab/model.hpp"
#include "langlab/ops.hpp"
#include "langlab/tensor.hpp"
#include "support/synthetic.hpp"
#include "support/testutil.hpp"

using namespace langlab;

#ifndef LANGLAB_DATA_DIR
#define LANGLAB_DATA_DIR "data"
#endif

namespace {

PromptTemplate en_template() {
    PromptTemplate tpl;
    tpl.pattern = "[premise], right? [Mask], [hypothesis]";
    tpl.verbalizers = {"Yes", "No", "Also"};
    return tpl;
}

// Everything zero-shot scoring needs, sized for fast tests.
struct ZeroShotFixture {
    BpeVocab vocab;
    Model model;

    explicit ZeroShotFixture(uint64_t seed = 11) {
        vocab = train_bpe(synth::corpus_lines(synth::Lang::A, 120, 4), 300);
        ModelConfig cfg;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.d_model = 32;
        cfg.d_ffn = 64;
        cfg.vocab_size = vocab.vocab_size();
        cfg.max_positions = 128;
        cfg.seed = seed;
        model = build_model(cfg);
    }
};

// Independent reimplementation of the label score: render, encode, forward,
// then mean next-token log-probability over the mode's position set.
double brute_label_score(const Model& model, const BpeVocab& vocab, const PromptTemplate& tpl,
                         const NLIExample& ex, NliLabel label, ScoreMode mode) {
    const RenderedPrompt prompt = render_prompt_span(tpl, ex, label);
    const std::vector<int32_t> ids = encode(vocab, prompt.text);
    REQUIRE(ids.size() >= 2);
    IdBatch batch;
    batch.batch = 1;
    batch.seq = ids.size();
    batch.ids = ids;
    Tensor logits = forward_logits(model, batch);
    const size_t vocab_n = logits.shape().back();

    auto logprob_at = [&](size_t t) {  // log p(ids[t] | ids[<t])
        const float* row = logits.data() + (t - 1) * vocab_n;
        double mx = -1e300;
        for (size_t j = 0; j < vocab_n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (size_t j = 0; j < vocab_n; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        return static_cast<double>(row[static_cast<size_t>(ids[t])]) - (mx + std::log(denom));
    };

    double sum = 0.0;
    size_t counted = 0;
    if (mode == ScoreMode::MeanFullPrompt) {
        for (size_t t = 1; t < ids.size(); ++t) {
            sum += logprob_at(t);
            ++counted;
        }
    } else {
        size_t offset = 0;
        for (size_t t = 0; t < ids.size(); ++t) {
            const size_t len = decode(vocab, {ids[t]}).size();
            const size_t begin = offset;
            offset += len;
            if (t == 0) continue;
            if (begin < prompt.verbalizer_end && offset > prompt.verbalizer_begin) {
                sum += logprob_at(t);
                ++counted;
            }
        }
        REQUIRE(counted > 0);
    }
    return sum / static_cast<double>(counted);
}

}  // namespace

TEST_CASE("label names round-trip") {
    CHECK(parse_label("entailment") == NliLabel::Entailment);
    CHECK(parse_label("contradiction") == NliLabel::Contradiction);
    CHECK(parse_label("neutral") == NliLabel::Neutral);
    CHECK(std::string(label_name(NliLabel::Entailment)) == "entailment");
    CHECK(std::string(label_name(NliLabel::Contradiction)) == "contradiction");
    CHECK(std::string(label_name(NliLabel::Neutral)) == "neutral");
    CHECK_THROWS_AS(parse_label("maybe"), DataError);
}

TEST_CASE("prompt rendering is byte-exact") {
    PromptTemplate tpl = en_template();
    NLIExample ex;
    ex.premise = "It is raining";
    ex.hypothesis = "The ground is wet";

    CHECK(render_prompt(tpl, ex, NliLabel::Entailment) ==
          "It is raining, right? Yes, The ground is wet");
    CHECK(render_prompt(tpl, ex, NliLabel::Contradiction) ==
          "It is raining, right? No, The ground is wet");
    CHECK(render_prompt(tpl, ex, NliLabel::Neutral) ==
          "It is raining, right? Also, The ground is wet");

    PromptTemplate de;
    de.pattern = "[premise], richtig? [Mask], [hypothesis]";
    de.verbalizers = {"Ja", "Nein", "Auch"};
    CHECK(render_prompt(de, ex, NliLabel::Contradiction) ==
          "It is raining, richtig? Nein, The ground is wet");

    SUBCASE("the substituted span is reported") {
        RenderedPrompt rp = render_prompt_span(tpl, ex, NliLabel::Neutral);
        CHECK(rp.text.substr(rp.verbalizer_begin, rp.verbalizer_end - rp.verbalizer_begin) ==
              "Also");
    }
    SUBCASE("mask slot casing is flexible, other slots are not") {
        PromptTemplate upper = tpl;
        upper.pattern = "[premise] [MASK] [hypothesis]";
        CHECK(render_prompt(upper, ex, NliLabel::Entailment) ==
              "It is raining Yes The ground is wet");
        PromptTemplate lower = tpl;
        lower.pattern = "[premise] [mask] [hypothesis]";
        CHECK(render_prompt(lower, ex, NliLabel::Entailment) ==
              "It is raining Yes The ground is wet");
        PromptTemplate bad = tpl;
        bad.pattern = "[PREMISE] [Mask] [hypothesis]";  // premise slot missing
        CHECK_THROWS_AS(render_prompt(bad, ex, NliLabel::Entailment), ConfigError);
    }
    SUBCASE("validation requires each slot exactly once and non-empty verbalizers") {
        PromptTemplate two = tpl;
        two.pattern = "[premise] [premise] [Mask] [hypothesis]";
        CHECK_THROWS_AS(two.validate(), ConfigError);
        PromptTemplate none = tpl;
        none.pattern = "[premise] [hypothesis]";
        CHECK_THROWS_AS(none.validate(), ConfigError);
        PromptTemplate empty_verb = tpl;
        empty_verb.verbalizers[2] = "";
        CHECK_THROWS_AS(empty_verb.validate(), ConfigError);
    }
}

TEST_CASE("shipped prompt template files parse to the expected patterns") {
    const std::string dir = std::string(LANGLAB_DATA_DIR) + "/prompts/";

    PromptTemplate en = load_template(dir + "en.prompt");
    CHECK(en.pattern == "[premise], right? [Mask], [hypothesis]");
    CHECK(en.verbalizers == std::array<std::string, 3>{"Yes", "No", "Also"});

    PromptTemplate de = load_template(dir + "de.prompt");
    CHECK(de.pattern == "[premise], richtig? [Mask], [hypothesis]");
    CHECK(de.verbalizers == std::array<std::string, 3>{"Ja", "Nein", "Auch"});

    PromptTemplate ko = load_template(dir + "ko.prompt");
    CHECK(ko.pattern == "[premise], \xEB\xA7\x9E\xEC\xA7\x80? [Mask], [hypothesis]");
    CHECK(ko.verbalizers ==
          std::array<std::string, 3>{"\xEC\x98\x88", "\xEC\x95\x84\xEB\x8B\x88\xEC\x9A\x94",
                                     "\xEB\x98\x90\xED\x95\x9C"});

    NLIExample ex;
    ex.premise = "P";
    ex.hypothesis = "H";
    CHECK(render_prompt(en, ex, NliLabel::Entailment) == "P, right? Yes, H");
    CHECK(render_prompt(de, ex, NliLabel::Contradiction) == "P, richtig? Nein, H");
}

TEST_CASE("template file validation") {
    test::TmpDir tmp;
    SUBCASE("missing verbalizer line") {
        const std::string p = tmp.file("t1");
        test::write_file(p, "[premise] [Mask] [hypothesis]\nentailment\tYes\ncontradiction\tNo\n");
        CHECK_THROWS_AS(load_template(p), FormatError);
    }
    SUBCASE("verbalizer line without a tab") {
        const std::string p = tmp.file("t2");
        test::write_file(p,
                         "[premise] [Mask] [hypothesis]\nentailment Yes\ncontradiction\tNo\n"
                         "neutral\tAlso\n");
        CHECK_THROWS_AS(load_template(p), FormatError);
    }
    SUBCASE("duplicate label") {
        const std::string p = tmp.file("t3");
        test::write_file(p,
                         "[premise] [Mask] [hypothesis]\nentailment\tYes\nentailment\tNo\n"
                         "neutral\tAlso\n");
        CHECK_THROWS_AS(load_template(p), FormatError);
    }
    SUBCASE("pattern missing a slot") {
        const std::string p = tmp.file("t4");
        test::write_file(p, "[premise] [Mask]\nentailment\tYes\ncontradiction\tNo\nneutral\tA\n");
        CHECK_THROWS_AS(load_template(p), ConfigError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_template(tmp.file("absent")), DataError); }
}

TEST_CASE("NLI TSV loading") {
    test::TmpDir tmp;
    SUBCASE("round trip with UTF-8 and blank/CRLF lines") {
        const std::string p = tmp.file("d.tsv");
        test::write_file(p,
                         "A b c\td e\tentailment\r\n"
                         "\n"
                         "\xEC\x98\x88 text\tmore\tneutral\n"
                         "x\ty\tcontradiction\n");
        auto rows = load_nli_tsv(p);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].premise == "A b c");
        CHECK(rows[0].hypothesis == "d e");
        CHECK(rows[0].label == NliLabel::Entailment);
        CHECK(rows[1].premise == "\xEC\x98\x88 text");
        CHECK(rows[1].label == NliLabel::Neutral);
        CHECK(rows[2].label == NliLabel::Contradiction);
    }
    SUBCASE("field count and content errors") {
        const std::string p = tmp.file("bad.tsv");
        test::write_file(p, "only\ttwo\n");
        CHECK_THROWS_AS(load_nli_tsv(p), DataError);
        test::write_file(p, "a\tb\tc\td\n");
        CHECK_THROWS_AS(load_nli_tsv(p), DataError);
        test::write_file(p, "a\tb\tmaybe\n");
        CHECK_THROWS_AS(load_nli_tsv(p), DataError);
        test::write_file(p, "\tb\tentailment\n");
        CHECK_THROWS_AS(load_nli_tsv(p), DataError);
        CHECK_THROWS_AS(load_nli_tsv(tmp.file("absent.tsv")), DataError);
    }
}

TEST_CASE("zero-shot prediction matches a from-scratch rescoring") {
    ZeroShotFixture fx;
    PromptTemplate tpl = en_template();
    const auto examples = synth::nli_set(synth::Lang::A, 12, 31);

    for (ScoreMode mode : {ScoreMode::MeanFullPrompt, ScoreMode::VerbalizerOnly}) {
        CAPTURE(static_cast<int>(mode));
        for (const auto& ex : examples) {
            ZeroShotResult got = zero_shot_predict(fx.model, fx.vocab, tpl, ex, mode);
            std::array<double, 3> want{};
            for (size_t label = 0; label < 3; ++label) {
                want[label] = brute_label_score(fx.model, fx.vocab, tpl, ex,
                                                static_cast<NliLabel>(label), mode);
                CHECK(got.scores[label] == doctest::Approx(want[label]).epsilon(1e-12));
            }
            size_t best = 0;
            for (size_t label = 1; label < 3; ++label) {
                if (want[label] > want[best]) best = label;
            }
            CHECK(static_cast<size_t>(got.prediction) == best);
        }
    }
}

TEST_CASE("uniform model scores every label equally and ties break to entailment") {
    ZeroShotFixture fx;
    // Zeroed token embeddings: the tied head makes every logit exactly zero.
    std::fill(fx.model.params.wte.vec().begin(), fx.model.params.wte.vec().end(), 0.0f);

    // The verbalizers must tokenize to the same COUNT for the three means to
    // be the same f64 value exactly. Bytes absent from the training corpus
    // can never participate in a merge, so each of these is one token in any
    // surrounding context.
    PromptTemplate tpl = en_template();
    tpl.verbalizers = {"q", "x", "z"};

    const auto examples = synth::nli_set(synth::Lang::A, 9, 77);
    const double uniform = -std::log(static_cast<double>(fx.vocab.vocab_size()));
    for (const auto& ex : examples) {
        ZeroShotResult res = zero_shot_predict(fx.model, fx.vocab, tpl, ex);
        CHECK(res.scores[0] == res.scores[1]);
        CHECK(res.scores[0] == res.scores[2]);
        CHECK(res.scores[0] == doctest::Approx(uniform).epsilon(1e-9));
        CHECK(res.prediction == NliLabel::Entailment);
    }

    // Single-byte verbalizers give the same exact tie under verbalizer-only
    // scoring (each label averages exactly one position).
    tpl.verbalizers = {"q", "x", "z"};
    ZeroShotResult res =
        zero_shot_predict(fx.model, fx.vocab, tpl, examples[0], ScoreMode::VerbalizerOnly);
    CHECK(res.scores[0] == res.scores[1]);
    CHECK(res.scores[0] == res.scores[2]);
    CHECK(res.prediction == NliLabel::Entailment);
}

TEST_CASE("zero-shot input validation") {
    ZeroShotFixture fx;
    NLIExample ex;
    ex.premise = "p";
    ex.hypothesis = "h";

    SUBCASE("model/tokenizer vocab mismatch") {
        BpeVocab other;  // bare 256-byte vocab, different size
        CHECK_THROWS_AS(zero_shot_predict(fx.model, other, en_template(), ex), ConfigError);
    }
    SUBCASE("verbalizer-only scoring needs a scoreable position") {
        // Mask first: the verbalizer is the prompt's first token, which is
        // never a prediction target.
        PromptTemplate tpl;
        tpl.pattern = "[Mask] [premise] [hypothesis]";
        tpl.verbalizers = {"x", "y", "z"};
        CHECK_THROWS_AS(zero_shot_predict(fx.model, fx.vocab, tpl, ex, ScoreMode::VerbalizerOnly),
                        DataError);
    }
}

TEST_CASE("accuracy and confusion-matrix bookkeeping") {
    using L = NliLabel;
    const std::vector<L> preds{L::Entailment, L::Contradiction, L::Neutral, L::Entailment};
    const std::vector<L> gold{L::Entailment, L::Neutral, L::Neutral, L::Contradiction};
    EvalReport rep = evaluate_accuracy(preds, gold);
    CHECK(rep.total == 4);
    CHECK(rep.accuracy == doctest::Approx(0.5));
    CHECK(rep.confusion[0][0] == 1);  // entailment -> entailment
    CHECK(rep.confusion[2][1] == 1);  // neutral -> contradiction
    CHECK(rep.confusion[2][2] == 1);  // neutral -> neutral
    CHECK(rep.confusion[1][0] == 1);  // contradiction -> entailment
    CHECK(rep.confusion[0][1] == 0);

    CHECK_THROWS_AS(evaluate_accuracy({}, {}), ContractError);
    CHECK_THROWS_AS(evaluate_accuracy(preds, {L::Entailment}), ContractError);
}

namespace {

// Classification fixture: vocabulary with a pad special and a small model.
struct TaskFixture {
    BpeVocab vocab;
    Model model;

    explicit TaskFixture(uint64_t seed = 5) {
        vocab = train_bpe(synth::corpus_lines(synth::Lang::A, 120, 4), 300, {"<pad>"});
        ModelConfig cfg;
        cfg.n_layers = 1;
        cfg.n_heads = 2;
        cfg.d_model = 32;
        cfg.d_ffn = 64;
        cfg.vocab_size = vocab.vocab_size();
        cfg.max_positions = 64;
        cfg.seed = seed;
        model = build_model(cfg);
    }
};

std::unordered_map<std::string, uint64_t> model_sums(const Model& m) {
    std::unordered_map<std::string, uint64_t> out;
    for (const auto& [name, t] : m.named()) out[name] = tensor_checksum(t);
    return out;
}

}  // namespace

TEST_CASE("supervised head learns marker-separable data with a frozen backbone") {
    TaskFixture fx;
    const auto train_set = synth::nli_set(synth::Lang::A, 30, 19);

    TaskHead head = build_task_head(fx.model.config.d_model, fx.model.config.n_layers, 4, 123);
    TaskHyper hyper;
    hyper.epochs = 6;
    hyper.batch_size = 8;
    hyper.lr = 1e-2;
    hyper.seq_len = 48;

    const auto before = model_sums(fx.model);
    train_task_head(fx.model, head, fx.vocab, train_set, hyper, 7);
    CHECK(model_sums(fx.model) == before);  // backbone untouched, bitwise

    const auto preds = classify(fx.model, head, fx.vocab, train_set, hyper.seq_len);
    REQUIRE(preds.size() == train_set.size());
    std::vector<NliLabel> gold;
    for (const auto& ex : train_set) gold.push_back(ex.label);
    const double acc = evaluate_accuracy(preds, gold).accuracy;
    // The class marker is the final token of every row; the pooled state
    // separates it easily.
    CHECK(acc >= 0.8);

    SUBCASE("training is deterministic in the seed") {
        TaskHead again = build_task_head(fx.model.config.d_model, fx.model.config.n_layers, 4, 123);
        train_task_head(fx.model, again, fx.vocab, train_set, hyper, 7);
        for (size_t i = 0; i < head.named().size(); ++i) {
            CHECK(tensor_checksum(head.named()[i].second) ==
                  tensor_checksum(again.named()[i].second));
        }
    }
    SUBCASE("batch size does not change predictions") {
        const auto preds1 = classify(fx.model, head, fx.vocab, train_set, hyper.seq_len, 1);
        const auto preds7 = classify(fx.model, head, fx.vocab, train_set, hyper.seq_len, 7);
        CHECK(preds1 == preds);
        CHECK(preds7 == preds);
    }
}

TEST_CASE("classification batching validation") {
    TaskFixture fx;
    TaskHead head = build_task_head(32, 1, 4, 9);
    const auto examples = synth::nli_set(synth::Lang::A, 3, 2);

    SUBCASE("head must match the model width") {
        TaskHead narrow = build_task_head(16, 1, 4, 9);
        CHECK_THROWS_AS(classify(fx.model, narrow, fx.vocab, examples, 48), ConfigError);
        TaskHyper hyper;
        CHECK_THROWS_AS(train_task_head(fx.model, narrow, fx.vocab, examples, hyper, 1),
                        ConfigError);
    }
    SUBCASE("sequence length must fit separator plus one token each side") {
        CHECK_THROWS_AS(classify(fx.model, head, fx.vocab, examples, 2), ConfigError);
    }
    SUBCASE("long examples are truncated, not rejected") {
        NLIExample big;
        big.premise = synth::corpus_text(synth::Lang::A, 20, 3);
        big.hypothesis = synth::corpus_text(synth::Lang::A, 20, 4);
        big.label = NliLabel::Neutral;
        const auto preds = classify(fx.model, head, fx.vocab, {big}, 16);
        CHECK(preds.size() == 1);
    }
    SUBCASE("a vocabulary without specials cannot pad") {
        BpeVocab bare = train_bpe(synth::corpus_lines(synth::Lang::A, 40, 4), 300);
        Model m = fx.model;
        m.config.vocab_size = bare.vocab_size();
        CHECK_THROWS_AS(classify(m, head, bare, examples, 48), ConfigError);
    }
    SUBCASE("empty training set") {
        TaskHyper hyper;
        CHECK_THROWS_AS(train_task_head(fx.model, head, fx.vocab, {}, hyper, 1), DataError);
    }
    SUBCASE("task head reduction must leave width") {
        CHECK_THROWS_AS(build_task_head(32, 1, 0, 9), ConfigError);
        CHECK_THROWS_AS(build_task_head(32, 1, 64, 9), ConfigError);
    }
}

TEST_CASE("transfer evaluation with the source model itself equals supervised accuracy") {
    TaskFixture fx;
    const auto train_set = synth::nli_set(synth::Lang::A, 18, 19);
    const auto eval_set = synth::nli_set(synth::Lang::A, 12, 91);

    TaskHead head = build_task_head(fx.model.config.d_model, fx.model.config.n_layers, 4, 5);
    TaskHyper hyper;
    hyper.epochs = 2;
    hyper.batch_size = 8;
    hyper.lr = 1e-2;
    hyper.seq_len = 48;
    train_task_head(fx.model, head, fx.vocab, train_set, hyper, 3);

    const auto preds = classify(fx.model, head, fx.vocab, eval_set, hyper.seq_len);
    std::vector<NliLabel> gold;
    for (const auto& ex : eval_set) gold.push_back(ex.label);
    const double direct = evaluate_accuracy(preds, gold).accuracy;

    const double transferred =
        cross_lingual_eval(fx.model, head, fx.vocab, eval_set, hyper.seq_len);
    CHECK(transferred == direct);

    SUBCASE("width mismatch is rejected") {
        TaskHead narrow = build_task_head(16, 1, 4, 9);
        CHECK_THROWS_AS(cross_lingual_eval(fx.model, narrow, fx.vocab, eval_set, 48),
                        ConfigError);
    }
}
