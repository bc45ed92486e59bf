#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "merits/context.hpp"
#include "merits/evalkit.hpp"
#include "merits/synthetic.hpp"
#include "testutil.hpp"

using namespace merits;

namespace {

GruDirection make_dir(std::size_t in, std::size_t hidden, std::uint64_t seed) {
    GruDirection d("dir", in, hidden);
    d.wx.value = testutil::random_matrix(in, 3 * hidden, seed, 0.4);
    d.wh.value = testutil::random_matrix(hidden, 3 * hidden, seed + 1, 0.4);
    d.b.value = testutil::random_matrix(1, 3 * hidden, seed + 2, 0.1);
    return d;
}

Matrix run_dir(GruDirection& d, const Matrix& x, const std::vector<bool>& mask,
               bool reverse) {
    ad::Graph g;
    return d.run(g, g.leaf(x), mask, reverse)->v();
}

// Scalar-loop reimplementation of the gated recurrence, kept deliberately
// free of the library's matrix ops so the two can disagree.
Matrix reference_gru(const GruDirection& d, const Matrix& x,
                     const std::vector<bool>& mask, bool reverse) {
    const std::size_t k = x.rows();
    const std::size_t h = d.wh.value.rows();
    const Matrix& wx = d.wx.value;
    const Matrix& wh = d.wh.value;
    const Matrix& b = d.b.value;
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

    Matrix out(k, h);
    std::vector<double> prev(h, 0.0);
    for (std::size_t step = 0; step < k; ++step) {
        const std::size_t t = reverse ? k - 1 - step : step;
        if (!mask[t]) {
            for (std::size_t j = 0; j < h; ++j) out(t, j) = prev[j];
            continue;
        }
        std::vector<double> xt(3 * h), hp(3 * h);
        for (std::size_t c = 0; c < 3 * h; ++c) {
            double s = b(0, c);
            for (std::size_t i = 0; i < x.cols(); ++i) s += x(t, i) * wx(i, c);
            xt[c] = s;
            double sh = 0.0;
            for (std::size_t i = 0; i < h; ++i) sh += prev[i] * wh(i, c);
            hp[c] = sh;
        }
        std::vector<double> next(h);
        for (std::size_t j = 0; j < h; ++j) {
            const double r = sig(xt[j] + hp[j]);
            const double z = sig(xt[h + j] + hp[h + j]);
            const double n = std::tanh(xt[2 * h + j] + r * hp[2 * h + j]);
            next[j] = (1.0 - z) * n + z * prev[j];
        }
        for (std::size_t j = 0; j < h; ++j) out(t, j) = next[j];
        prev = next;
    }
    return out;
}

Matrix flip_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            out(m.rows() - 1 - i, j) = m(i, j);
    return out;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(rows[i], j);
    return out;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ctxtest_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

TrainConfig quick_config(std::size_t epochs, double lr, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch_size = 32;
    cfg.seed = seed;
    return cfg;
}

SyntheticBundle context_bundle(std::size_t train, std::size_t val,
                               std::size_t max_len, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.task = SyntheticTask::context;
    spec.train_conversations = train;
    spec.val_conversations = val;
    spec.test_conversations = val;
    spec.min_len = 2;
    spec.max_len = max_len;
    spec.seed = seed;
    return make_synthetic(spec);
}

}  // namespace

TEST_CASE("gated recurrence matches a scalar reimplementation") {
    GruDirection dir = make_dir(3, 4, 77);
    const Matrix x = testutil::random_matrix(5, 3, 99, 1.0);

    SUBCASE("forward, no padding") {
        std::vector<bool> mask(5, true);
        CHECK(max_abs_diff(run_dir(dir, x, mask, false),
                           reference_gru(dir, x, mask, false)) < 1e-12);
    }
    SUBCASE("backward, no padding") {
        std::vector<bool> mask(5, true);
        CHECK(max_abs_diff(run_dir(dir, x, mask, true),
                           reference_gru(dir, x, mask, true)) < 1e-12);
    }
    SUBCASE("interior and trailing padding glide the state") {
        std::vector<bool> mask{true, false, true, true, false};
        const Matrix got = run_dir(dir, x, mask, false);
        CHECK(max_abs_diff(got, reference_gru(dir, x, mask, false)) < 1e-12);
        // The padded row after t=0 must hold exactly the t=0 state.
        CHECK(max_abs_diff(take_rows(got, {1}), take_rows(got, {0})) == 0.0);
        CHECK(max_abs_diff(take_rows(got, {4}), take_rows(got, {3})) == 0.0);
    }
}

TEST_CASE("the backward direction is the forward direction on the flipped sequence") {
    GruDirection dir = make_dir(4, 6, 13);
    const Matrix x = testutil::random_matrix(7, 4, 14, 1.0);
    std::vector<bool> mask{true, true, false, true, true, true, false};

    const Matrix rev = run_dir(dir, x, mask, true);
    std::vector<bool> flipped_mask(mask.rbegin(), mask.rend());
    const Matrix fwd_on_flipped = run_dir(dir, flip_rows(x), flipped_mask, false);
    // Identical arithmetic in the identical order, so bit-for-bit equal.
    CHECK(max_abs_diff(rev, flip_rows(fwd_on_flipped)) == 0.0);
}

TEST_CASE("padding never leaks into valid positions") {
    Stage2Config cfg;
    cfg.input_dim = 6;
    cfg.gru_hidden = 5;
    cfg.attn_heads = 2;
    cfg.n_classes = 3;
    Stage2Model model = Stage2Model::create(Modality::speech, cfg, 3);

    const Matrix clean = testutil::random_matrix(4, 6, 21, 1.0);
    // Same four rows with junk inserted at position 2 and appended twice,
    // all flagged invalid. Junk is large on purpose.
    Matrix padded(7, 6);
    const Matrix junk = testutil::random_matrix(3, 6, 22, 50.0);
    const std::vector<std::size_t> placement{0, 1, 99, 2, 3, 99, 99};
    std::size_t junk_at = 0;
    for (std::size_t i = 0; i < 7; ++i) {
        const Matrix& src = placement[i] == 99 ? junk : clean;
        const std::size_t row = placement[i] == 99 ? junk_at++ : placement[i];
        for (std::size_t j = 0; j < 6; ++j) padded(i, j) = src(row, j);
    }
    std::vector<bool> mask{true, true, false, true, true, false, false};

    ad::Graph g1, g2;
    auto on_clean = model.forward(g1, g1.leaf(clean), std::vector<bool>(4, true));
    auto on_padded = model.forward(g2, g2.leaf(padded), mask);

    const std::vector<std::size_t> valid{0, 1, 3, 4};
    CHECK(max_abs_diff(on_clean.features->v(),
                       take_rows(on_padded.features->v(), valid)) == 0.0);
    CHECK(max_abs_diff(on_clean.logits->v(),
                       take_rows(on_padded.logits->v(), valid)) == 0.0);
}

TEST_CASE("malformed sequences are rejected") {
    Stage2Config cfg;
    cfg.input_dim = 6;
    cfg.gru_hidden = 4;
    cfg.attn_heads = 2;
    cfg.n_classes = 3;
    Stage2Model model = Stage2Model::create(Modality::text, cfg, 1);
    const Matrix x = testutil::random_matrix(3, 6, 5, 1.0);

    SUBCASE("mask that excludes everything") {
        ad::Graph g;
        CHECK_THROWS_AS(model.forward(g, g.leaf(x), {false, false, false}),
                        DomainError);
    }
    SUBCASE("mask length mismatch") {
        ad::Graph g;
        CHECK_THROWS_AS(model.forward(g, g.leaf(x), {true, true}), IntegrityError);
    }
    SUBCASE("sequence width mismatch") {
        ad::Graph g;
        const Matrix wide = testutil::random_matrix(3, 9, 6, 1.0);
        CHECK_THROWS_AS(model.forward(g, g.leaf(wide), {true, true, true}),
                        ConfigError);
    }
}

TEST_CASE("evaluation forward checks sequence provenance") {
    Stage2Config cfg;
    cfg.input_dim = 5;
    cfg.gru_hidden = 4;
    cfg.attn_heads = 2;
    cfg.n_classes = 2;
    Stage2Model model = Stage2Model::create(Modality::speech, cfg, 9);

    EmbeddingSequence seq;
    seq.conversation_id = "c0";
    seq.matrix = testutil::random_matrix(3, 5, 31, 1.0);
    seq.mask.assign(3, true);
    seq.stage_tag = StageTag::stage1;
    seq.modality = Modality::speech;

    SUBCASE("matches the graph forward bit for bit") {
        ContextOut out = context_forward(model, seq);
        ad::Graph g;
        auto fwd = model.forward(g, g.leaf(seq.matrix), seq.mask);
        CHECK(max_abs_diff(out.features, fwd.features->v()) == 0.0);
        CHECK(max_abs_diff(out.logits, fwd.logits->v()) == 0.0);
    }
    SUBCASE("second-stage input is refused") {
        seq.stage_tag = StageTag::stage2;
        CHECK_THROWS_AS(context_forward(model, seq), IntegrityError);
    }
    SUBCASE("modality crossover is refused") {
        seq.modality = Modality::text;
        CHECK_THROWS_AS(context_forward(model, seq), IntegrityError);
    }
}

TEST_CASE("second-stage sequences carry their provenance forward") {
    Stage2Config cfg;
    cfg.input_dim = 5;
    cfg.gru_hidden = 3;
    cfg.attn_heads = 2;
    cfg.n_classes = 2;
    Stage2Model model = Stage2Model::create(Modality::text, cfg, 4);

    EmbeddingSequence s1;
    s1.conversation_id = "conv_7";
    s1.matrix = testutil::random_matrix(4, 5, 41, 1.0);
    s1.mask = {true, true, false, true};
    s1.stage_tag = StageTag::stage1;
    s1.modality = Modality::text;

    EmbeddingSequence s2 = stage2_sequence(model, s1);
    CHECK(s2.conversation_id == "conv_7");
    CHECK(s2.stage_tag == StageTag::stage2);
    CHECK(s2.modality == Modality::text);
    CHECK(s2.mask == s1.mask);
    CHECK(s2.matrix.rows() == 4);
    CHECK(s2.matrix.cols() == cfg.feature_dim());
    CHECK(max_abs_diff(s2.matrix, context_forward(model, s1).features) == 0.0);
}

TEST_CASE("conversation model blob round trip is bit exact") {
    Stage2Config cfg;
    cfg.input_dim = 9;
    cfg.gru_hidden = 7;
    cfg.attn_heads = 2;
    cfg.n_classes = 5;
    Stage2Model model = Stage2Model::create(Modality::speech, cfg, 12);
    // Touch every parameter so defaults cannot mask a copy bug.
    std::uint64_t salt = 100;
    for (Parameter* p : model.parameters())
        p->value = testutil::random_matrix(p->value.rows(), p->value.cols(), ++salt, 0.7);

    const std::vector<std::uint8_t> blob = model.to_blob();
    Stage2Model back = Stage2Model::from_blob(blob);
    CHECK(back.modality == Modality::speech);
    CHECK(back.cfg.input_dim == 9);
    CHECK(back.cfg.gru_hidden == 7);
    CHECK(back.cfg.attn_heads == 2);
    CHECK(back.cfg.n_classes == 5);
    auto orig_params = model.parameters();
    auto back_params = back.parameters();
    REQUIRE(orig_params.size() == back_params.size());
    for (std::size_t i = 0; i < orig_params.size(); ++i)
        CHECK(max_abs_diff(orig_params[i]->value, back_params[i]->value) == 0.0);

    SUBCASE("trailing bytes are rejected") {
        std::vector<std::uint8_t> longer = blob;
        longer.push_back(0);
        CHECK_THROWS_AS(Stage2Model::from_blob(longer), ParseError);
    }
    SUBCASE("truncation is rejected") {
        std::vector<std::uint8_t> shorter(blob.begin(), blob.end() - 8);
        CHECK_THROWS_AS(Stage2Model::from_blob(shorter), ParseError);
    }
}

TEST_CASE("conversation model gradients match finite differences") {
    Stage2Config cfg;
    cfg.input_dim = 5;
    cfg.gru_hidden = 3;
    cfg.attn_heads = 2;
    cfg.n_classes = 3;
    Stage2Model model = Stage2Model::create(Modality::text, cfg, 8);

    const Matrix x = testutil::random_matrix(4, 5, 61, 1.0);
    const std::vector<bool> mask{true, true, false, true};
    const std::vector<int> labels{0, 2, 0, 1};
    const std::vector<bool> rows{true, true, false, true};

    auto loss = [&](bool with_grad) {
        ad::Graph g;
        auto fwd = model.forward(g, g.leaf(x), mask);
        ad::Var l = g.cross_entropy(fwd.logits, labels, &rows, 3.0);
        if (with_grad) g.backward(l);
        return l->v()(0, 0);
    };
    testutil::check_gradients(model.parameters(), loss);
}

TEST_CASE("conversation training learns a task the utterance stage cannot") {
    SyntheticBundle bundle = context_bundle(200, 80, 10, 9);

    auto s1 = stage1_train(Modality::speech, bundle.train, bundle.val, &bundle.store,
                           quick_config(4, 1e-3, 1));
    const double utterance_f1 =
        evaluate(stage1_scorer(s1.model, &bundle.store), bundle.val).weighted_f1;
    CHECK(utterance_f1 <= 0.65);

    const TrainConfig cfg = quick_config(20, 1e-3, 1);
    auto s2 = stage2_train(s1.model, bundle.train, bundle.val, &bundle.store, cfg);
    CHECK(s2.history.best_val_f1 >= 0.9);
    CHECK(s2.history.best_val_f1 > utterance_f1 + 0.2);

    CHECK(s2.history.epochs.size() == cfg.epochs);
    REQUIRE(s2.history.best_epoch >= 0);
    REQUIRE(static_cast<std::size_t>(s2.history.best_epoch) < cfg.epochs);
    CHECK(s2.history.epochs[static_cast<std::size_t>(s2.history.best_epoch)].val_f1 ==
          s2.history.best_val_f1);

    // The kept model must reproduce the best epoch's score, not the last one's.
    const double replay =
        evaluate(stage2_scorer(s1.model, s2.model, &bundle.store), bundle.val)
            .weighted_f1;
    CHECK(replay == doctest::Approx(s2.history.best_val_f1).epsilon(1e-12));
}

TEST_CASE("one seed, one set of weights") {
    SyntheticBundle bundle = context_bundle(24, 12, 5, 33);
    auto s1 = stage1_train(Modality::speech, bundle.train, bundle.val, &bundle.store,
                           quick_config(0, 1e-3, 2));

    auto run = [&](std::uint64_t seed) {
        return stage2_train(s1.model, bundle.train, bundle.val, &bundle.store,
                            quick_config(2, 1e-3, seed))
            .model.to_blob();
    };
    CHECK(run(5) == run(5));
    CHECK(run(5) != run(6));
}

TEST_CASE("feature export writes one tagged row per utterance") {
    SyntheticBundle bundle = context_bundle(6, 3, 5, 21);
    auto s1 = stage1_train(Modality::speech, bundle.train, bundle.val, &bundle.store,
                           quick_config(0, 1e-3, 2));

    Stage2Config cfg;
    cfg.input_dim = s1.model.output_dim();
    cfg.gru_hidden = 8;
    cfg.attn_heads = 2;
    cfg.n_classes = bundle.train.label_space.size();
    Stage2Model s2 = Stage2Model::create(Modality::speech, cfg, 5);

    TempDir tmp;
    const auto file = tmp.path / "stage2_features.jsonl";
    export_stage2_features(s1.model, s2, bundle.val, &bundle.store, file);

    FeatureStore out = FeatureStore::load(file);
    CHECK(out.dim() == cfg.feature_dim());
    CHECK(out.size() == bundle.val.utterance_count());
    CHECK(out.stage_tag() == "stage2");
    CHECK(out.modality_tag() == "speech");

    const Conversation& conv = bundle.val.conversations.front();
    const ContextOut fwd =
        context_forward(s2, stage1_sequence(s1.model, conv, &bundle.store));
    for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
        REQUIRE(out.contains(conv.utterances[k].utterance_id));
        const std::vector<float>& vec = out.lookup(conv.utterances[k].utterance_id);
        REQUIRE(vec.size() == fwd.features.cols());
        for (std::size_t j = 0; j < vec.size(); ++j)
            CHECK(vec[j] == static_cast<float>(fwd.features(k, j)));
    }
}
