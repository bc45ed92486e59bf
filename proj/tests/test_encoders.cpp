#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "merits/encoders.hpp"
#include "merits/evalkit.hpp"
#include "merits/synthetic.hpp"
#include "testutil.hpp"

using namespace merits;
using testutil::check_gradients;

namespace {

// 300 records, three disjoint keyword vocabularies, class-balanced.
PseudoLabeledCorpus keyword_corpus() {
    PseudoLabeledCorpus corpus;
    corpus.backend = "mock";
    const char* frames[] = {"we saw the %s again", "it was %s all day",
                            "quite a %s thing", "so very %s indeed",
                            "that %s moment stayed"};
    for (int i = 0; i < 300; ++i) {
        const auto s = static_cast<Sentiment>(i % 3);
        const auto& words = MockSentimentClient::lexicon(s);
        const std::string& word = words[static_cast<std::size_t>(i / 3) % words.size()];
        char text[96];
        std::snprintf(text, sizeof text, frames[i % 5], word.c_str());
        corpus.records.push_back({"p" + std::to_string(i), text, s});
    }
    return corpus;
}

TrainConfig quick_config(int epochs, double lr, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch_size = 32;
    cfg.seed = seed;
    return cfg;
}

double cosine(const Matrix& a, const Matrix& b) {
    const double num = dot_all(a, b);
    return num / std::sqrt(dot_all(a, a) * dot_all(b, b));
}

SyntheticBundle small_bundle(SyntheticTask task, std::size_t train, std::size_t evals) {
    SyntheticSpec spec = SyntheticSpec::defaults_for(task, 5);
    spec.train_conversations = train;
    spec.val_conversations = evals;
    spec.test_conversations = evals;
    spec.max_len = 5;
    return make_synthetic(spec);
}

}  // namespace

TEST_CASE("tokenizer splits on case, whitespace and punctuation") {
    auto toks = Tokenizer::split("So, it's DONE - twice!");
    REQUIRE(toks.size() == 5);
    CHECK(toks[0] == "so");
    CHECK(toks[1] == "it");
    CHECK(toks[2] == "s");
    CHECK(toks[3] == "done");
    CHECK(toks[4] == "twice");

    Tokenizer tok = Tokenizer::build({"alpha beta", "beta gamma"});
    const auto ids = tok.encode("beta unknownword");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] > Tokenizer::kUnkId);
    CHECK(ids[1] == Tokenizer::kUnkId);

    // Empty input still produces one id, the null sentinel.
    const auto empty = tok.encode("");
    REQUIRE(empty.size() == 1);
    CHECK(empty[0] == Tokenizer::kNullId);

    Tokenizer again = Tokenizer::from_vocab(tok.vocab());
    CHECK(again.encode("beta unknownword") == ids);
}

TEST_CASE("pretraining separates a 300-record keyword corpus") {
    PretrainResult pre = pretrain_text_encoder(keyword_corpus(), quick_config(6, 3e-3, 1));
    CHECK(pre.val_accuracy >= 0.95);
    CHECK(pre.history.epochs.size() == 6);
    CHECK(pre.model.modality == Modality::text);
    CHECK(pre.model.n_classes == 3);

    SUBCASE("identical transcripts encode identically") {
        Matrix a = encode_utterance_text(pre.model, "a great day by the window");
        Matrix b = encode_utterance_text(pre.model, "a great day by the window");
        CHECK(max_abs_diff(a, b) == 0.0);
        CHECK(a.cols() == pre.model.output_dim());
    }

    SUBCASE("swapping one sentiment keyword moves the embedding") {
        Matrix a = encode_utterance_text(pre.model, "we saw the great thing again");
        Matrix b = encode_utterance_text(pre.model, "we saw the awful thing again");
        CHECK(cosine(a, b) < 1.0 - 1e-6);
    }

    SUBCASE("empty transcripts are defined") {
        Matrix e = encode_utterance_text(pre.model, "");
        CHECK(e.cols() == pre.model.output_dim());
        for (std::size_t j = 0; j < e.cols(); ++j) CHECK(std::isfinite(e(0, j)));
    }

    SUBCASE("checkpoint blob reloads to bit-identical encoding") {
        Stage1Model back = Stage1Model::from_blob(pre.model.to_blob());
        Matrix a = encode_utterance_text(pre.model, "quite a dismal thing");
        Matrix b = encode_utterance_text(back, "quite a dismal thing");
        CHECK(max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("pretraining rejects empty corpora and tolerates one class") {
    PseudoLabeledCorpus empty;
    CHECK_THROWS_AS((void)pretrain_text_encoder(empty, quick_config(1, 1e-3, 1)),
                    DomainError);

    PseudoLabeledCorpus mono;
    for (int i = 0; i < 40; ++i)
        mono.records.push_back({"m" + std::to_string(i),
                                "the printer by the cabinet", Sentiment::neutral});
    PretrainResult pre = pretrain_text_encoder(mono, quick_config(1, 1e-3, 1));
    CHECK(pre.val_accuracy == 1.0);  // degenerate but legal
}

TEST_CASE("stage one separates per-utterance classes in both modalities") {
    SyntheticBundle bundle = small_bundle(SyntheticTask::separable, 120, 60);

    Stage1TrainResult text = stage1_train(Modality::text, bundle.train, bundle.val,
                                          &bundle.store, quick_config(8, 3e-3, 1));
    CHECK(text.history.best_val_f1 >= 0.95);

    Stage1TrainResult speech = stage1_train(Modality::speech, bundle.train, bundle.val,
                                            &bundle.store, quick_config(8, 3e-3, 1));
    CHECK(speech.history.best_val_f1 >= 0.95);

    SUBCASE("one embedding row per utterance, d1 wide") {
        const Conversation& conv = bundle.val.conversations.front();
        Matrix rows = stage1_embed_conversation(text.model, conv, nullptr);
        CHECK(rows.rows() == conv.utterances.size());
        CHECK(rows.cols() == text.model.output_dim());

        Matrix one = stage1_embed(speech.model, conv.utterances[0], &bundle.store);
        CHECK(one.rows() == 1);
        CHECK(one.cols() == speech.model.output_dim());
        Matrix two = stage1_embed(speech.model, conv.utterances[0], &bundle.store);
        CHECK(max_abs_diff(one, two) == 0.0);
    }

    SUBCASE("frozen embeddings stay linearly separable") {
        // Post-hoc logistic probe on the trunk output.
        std::vector<Matrix> rows;
        std::vector<int> labels;
        for (const Conversation& conv : bundle.val.conversations)
            for (const Utterance& u : conv.utterances) {
                rows.push_back(stage1_embed(text.model, u, nullptr));
                labels.push_back(u.gold_label);
            }
        Matrix x(rows.size(), rows[0].cols());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) = rows[i](0, j);

        Parameter w("probe.w", x.cols(), 4), b("probe.b", 1, 4);
        nn::AdamW opt;
        opt.lr = 0.05;
        for (int step = 0; step < 200; ++step) {
            ad::Graph g;
            ad::Var logits =
                g.add_rowvec(g.matmul(g.leaf(x), g.param(w)), g.param(b));
            ad::Var loss = g.cross_entropy(logits, labels, nullptr,
                                           static_cast<double>(labels.size()));
            nn::zero_grads({&w, &b});
            g.backward(loss);
            opt.step({&w, &b});
        }
        Matrix logits = ad::eval([&](ad::Graph& g) {
            return g.add_rowvec(g.matmul(g.leaf(x), g.param(w)), g.param(b));
        });
        std::size_t hits = 0;
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < logits.cols(); ++j)
                if (logits(i, j) > logits(i, arg)) arg = j;
            if (static_cast<int>(arg) == labels[i]) ++hits;
        }
        CHECK(static_cast<double>(hits) / static_cast<double>(labels.size()) >= 0.95);
    }
}

TEST_CASE("stage one cannot see the previous utterance") {
    SyntheticBundle bundle = small_bundle(SyntheticTask::context, 200, 80);
    Stage1TrainResult speech = stage1_train(Modality::speech, bundle.train, bundle.val,
                                            &bundle.store, quick_config(4, 1e-3, 1));
    CHECK(speech.history.best_val_f1 <= 0.6);
}

TEST_CASE("zero epochs returns an initialized model and empty history") {
    SyntheticBundle bundle = small_bundle(SyntheticTask::separable, 10, 5);
    Stage1TrainResult r = stage1_train(Modality::speech, bundle.train, bundle.val,
                                       &bundle.store, quick_config(0, 1e-3, 1));
    CHECK(r.history.epochs.empty());
    CHECK(r.history.best_epoch == -1);
    Matrix e = stage1_embed(r.model, bundle.val.conversations[0].utterances[0],
                            &bundle.store);
    CHECK(e.cols() == r.model.output_dim());
}

TEST_CASE("speech training validates the feature store") {
    SyntheticBundle bundle = small_bundle(SyntheticTask::separable, 10, 5);
    CHECK_THROWS_AS(stage1_train(Modality::speech, bundle.train, bundle.val, nullptr,
                                 quick_config(1, 1e-3, 1)),
                    ConfigError);

    // A store with the right keys but the wrong width fails the width check.
    FeatureStore narrow(4);
    for (const Dataset* ds : {&bundle.train, &bundle.val})
        for (const Conversation& conv : ds->conversations)
            for (const Utterance& u : conv.utterances)
                narrow.insert(u.speech_key, {1.f, 2.f, 3.f, 4.f});
    Stage1TrainResult tiny = stage1_train(Modality::speech, bundle.train, bundle.val,
                                          &narrow, quick_config(1, 1e-3, 1));
    CHECK_THROWS_AS((void)stage1_embed(tiny.model,
                                       bundle.val.conversations[0].utterances[0],
                                       &bundle.store),
                    ConfigError);
}

TEST_CASE("warm start adopts the pretrained trunk and tokenizer") {
    PretrainResult pre = pretrain_text_encoder(keyword_corpus(), quick_config(4, 3e-3, 1));
    SyntheticBundle bundle = small_bundle(SyntheticTask::keyword, 40, 20);

    Stage1TrainResult warm = stage1_train(Modality::text, bundle.train, bundle.val,
                                          nullptr, quick_config(0, 1e-3, 1), &pre.model);
    CHECK(warm.model.tokenizer.vocab() == pre.model.tokenizer.vocab());
    CHECK(warm.model.n_classes == bundle.train.label_space.size());
    // With zero downstream epochs the trunk is exactly the pretrained one.
    Matrix a = encode_utterance_text(pre.model, "so very gloomy indeed");
    Matrix b = encode_utterance_text(warm.model, "so very gloomy indeed");
    CHECK(max_abs_diff(a, b) == 0.0);

    CHECK_THROWS_AS(stage1_train(Modality::speech, bundle.train, bundle.val,
                                 &bundle.store, quick_config(1, 1e-3, 1), &pre.model),
                    ConfigError);
}

TEST_CASE("speech model blob round trips bit-exactly") {
    SyntheticBundle bundle = small_bundle(SyntheticTask::separable, 30, 10);
    Stage1TrainResult r = stage1_train(Modality::speech, bundle.train, bundle.val,
                                       &bundle.store, quick_config(2, 1e-3, 1));
    Stage1Model back = Stage1Model::from_blob(r.model.to_blob());
    const Utterance& u = bundle.val.conversations[0].utterances[0];
    CHECK(max_abs_diff(stage1_embed(r.model, u, &bundle.store),
                       stage1_embed(back, u, &bundle.store)) == 0.0);
    CHECK(back.modality == Modality::speech);
}

TEST_CASE("gradients flow correctly through both stage one trunks") {
    // Text: three utterances of different lengths, including an empty one.
    Tokenizer tok = Tokenizer::build({"spark ember flame", "river stone"});
    Stage1Model text = Stage1Model::text_model(tok, 3, 7, 8, 8, 8);
    std::vector<std::vector<int>> ids = {tok.encode("spark ember"),
                                         tok.encode("river unknown thing"),
                                         tok.encode("")};
    std::vector<int> labels = {0, 2, 1};
    auto text_loss = [&](bool backward) {
        ad::Graph g;
        ad::Var emb = text.embed_tokens(g, ids);
        ad::Var loss = g.cross_entropy(text.class_logits(g, emb), labels, nullptr, 3.0);
        if (backward) g.backward(loss);
        return loss->v()(0, 0);
    };
    check_gradients(text.parameters(), text_loss);

    // Speech: the same three-row batch through the feature head.
    Stage1Model speech = Stage1Model::speech_model(6, 3, 7, 8, 8);
    Matrix feats = testutil::random_matrix(3, 6, 42);
    auto speech_loss = [&](bool backward) {
        ad::Graph g;
        ad::Var emb = speech.embed_rows(g, g.leaf(feats));
        ad::Var loss = g.cross_entropy(speech.class_logits(g, emb), labels, nullptr, 3.0);
        if (backward) g.backward(loss);
        return loss->v()(0, 0);
    };
    check_gradients(speech.parameters(), speech_loss);
}
