#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "json.hpp"

#include "merits/evalkit.hpp"
#include "testutil.hpp"

using namespace merits;

namespace {

// Reference metric built from per-pair counting and the 2tp/(2tp+fp+fn)
// form, so it shares no code path or algebra layout with the library.
double reference_weighted_f1(const std::vector<int>& preds,
                             const std::vector<int>& golds, std::size_t n_classes) {
    double sum = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        long long tp = 0, fp = 0, fn = 0, support = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool pc = preds[i] == static_cast<int>(c);
            const bool gc = golds[i] == static_cast<int>(c);
            if (gc) ++support;
            if (pc && gc) ++tp;
            if (pc && !gc) ++fp;
            if (!pc && gc) ++fn;
        }
        if (support == 0) continue;
        const double f1 = static_cast<double>(2 * tp) /
                          static_cast<double>(2 * tp + fp + fn);
        sum += f1 * static_cast<double>(support) / static_cast<double>(preds.size());
    }
    return sum;
}

Dataset two_conversation_dataset() {
    Dataset ds;
    ds.label_space = LabelSpace::sentiment3();
    ds.split_tag = SplitTag::val;
    Conversation c1{"c1", {}};
    c1.utterances.push_back({"c1_u0", "fine", "", std::string("positive"), 0});
    c1.utterances.push_back({"c1_u1", "bad", "", std::string("negative"), 1});
    Conversation c2{"c2", {}};
    c2.utterances.push_back({"c2_u0", "meh", "", std::string("neutral"), 2});
    ds.conversations = {c1, c2};
    return ds;
}

}  // namespace

TEST_CASE("weighted f1 on worked examples") {
    SUBCASE("three classes, mixed errors") {
        // Per class: (tp, pred_n, gold_n) = (1,2,1), (2,3,3), (1,1,2); every
        // class lands on f1 = 2/3, so the weighted mean is 2/3 as well.
        const std::vector<int> preds{0, 1, 1, 2, 0, 1};
        const std::vector<int> golds{0, 1, 2, 2, 1, 1};
        CHECK(weighted_f1(preds, golds, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("collapse onto one class of a balanced binary problem") {
        std::vector<int> preds(10, 0), golds;
        for (int i = 0; i < 10; ++i) golds.push_back(i % 2);
        CHECK(weighted_f1(preds, golds, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("perfect predictions") {
        const std::vector<int> v{0, 3, 1, 2, 2, 3};
        CHECK(weighted_f1(v, v, 4) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("no overlap at all") {
        CHECK(weighted_f1({1, 1, 1}, {0, 0, 0}, 2) == 0.0);
    }
    SUBCASE("classes missing from gold carry no weight") {
        // Class 2 never appears in gold; predicting it only costs precision
        // elsewhere, its own f1 slot must not contribute.
        const std::vector<int> preds{0, 2, 1};
        const std::vector<int> golds{0, 0, 1};
        // class 0: tp=1, pred_n=1, gold_n=2 -> p=1, r=.5, f1=2/3, weight 2/3
        // class 1: tp=1, pred_n=1, gold_n=1 -> f1=1, weight 1/3
        CHECK(weighted_f1(preds, golds, 3) ==
              doctest::Approx(2.0 / 3.0 * 2.0 / 3.0 + 1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("weighted f1 agrees with an independent reimplementation") {
    std::mt19937_64 rng(20260819);
    for (int it = 0; it < 1000; ++it) {
        const std::size_t n_classes = 2 + rng() % 6;
        const std::size_t n = 1 + rng() % 500;
        // Half the time the gold side only uses a subset of classes, so zero
        // support and zero predictions both get exercised.
        const std::size_t gold_lim = (it % 2 == 0) ? n_classes : 1 + rng() % n_classes;
        std::vector<int> preds(n), golds(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = static_cast<int>(rng() % n_classes);
            golds[i] = static_cast<int>(rng() % gold_lim);
        }
        const double lib = weighted_f1(preds, golds, n_classes);
        const double ref = reference_weighted_f1(preds, golds, n_classes);
        REQUIRE(std::abs(lib - ref) < 1e-9);
        REQUIRE(lib >= 0.0);
        REQUIRE(lib <= 1.0 + 1e-12);
    }
}

TEST_CASE("pair order does not matter") {
    std::mt19937_64 rng(17);
    std::vector<int> preds(200), golds(200);
    for (std::size_t i = 0; i < 200; ++i) {
        preds[i] = static_cast<int>(rng() % 5);
        golds[i] = static_cast<int>(rng() % 5);
    }
    const double before = weighted_f1(preds, golds, 5);
    std::vector<std::size_t> order(200);
    for (std::size_t i = 0; i < 200; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> p2, g2;
    for (std::size_t i : order) {
        p2.push_back(preds[i]);
        g2.push_back(golds[i]);
    }
    CHECK(weighted_f1(p2, g2, 5) == before);
}

TEST_CASE("metric input validation") {
    CHECK_THROWS_AS(weighted_f1({}, {}, 3), DomainError);
    CHECK_THROWS_AS(weighted_f1({0, 1}, {0}, 3), DomainError);
    CHECK_THROWS_AS(weighted_f1({0, 3}, {0, 1}, 3), DomainError);
    CHECK_THROWS_AS(weighted_f1({0, -1}, {0, 1}, 3), DomainError);
    CHECK_THROWS_AS(weighted_f1({0, 1}, {0, 5}, 3), DomainError);
}

TEST_CASE("full report matches hand-computed cells") {
    const std::vector<int> preds{0, 1, 1, 2, 0, 1};
    const std::vector<int> golds{0, 1, 2, 2, 1, 1};
    EvalReport rep = evaluate_predictions(preds, golds, {"a", "b", "c"});

    CHECK(rep.total == 6);
    CHECK(rep.weighted_f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    const std::vector<std::vector<long long>> expect{{1, 0, 0}, {1, 2, 0}, {0, 1, 1}};
    CHECK(rep.confusion == expect);

    REQUIRE(rep.per_class.size() == 3);
    CHECK(rep.per_class[0].label == "a");
    CHECK(rep.per_class[0].precision == doctest::Approx(0.5));
    CHECK(rep.per_class[0].recall == doctest::Approx(1.0));
    CHECK(rep.per_class[0].support == 1);
    CHECK(rep.per_class[1].precision == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class[1].recall == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class[1].support == 3);
    CHECK(rep.per_class[2].precision == doctest::Approx(1.0));
    CHECK(rep.per_class[2].recall == doctest::Approx(0.5));
    CHECK(rep.per_class[2].support == 2);
    for (const ClassMetrics& m : rep.per_class)
        CHECK(m.f1 == doctest::Approx(2.0 / 3.0));

    SUBCASE("json serialization carries every section") {
        rep.stage = "stage2";
        const nlohmann::json j = nlohmann::json::parse(rep.to_json());
        CHECK(j["stage"] == "stage2");
        CHECK(j["total"] == 6);
        CHECK(j["weighted_f1"].get<double>() == doctest::Approx(2.0 / 3.0));
        CHECK(j["per_class"].size() == 3);
        CHECK(j["per_class"][1]["label"] == "b");
        CHECK(j["per_class"][1]["support"] == 3);
        CHECK(j["confusion"][1][0] == 1);
        CHECK(j["confusion"][1][1] == 2);
    }
}

TEST_CASE("argmax takes the lowest index on ties") {
    Matrix m(3, 3);
    m(0, 0) = 1.0; m(0, 1) = 3.0; m(0, 2) = 3.0;
    m(1, 0) = 0.5; m(1, 1) = 0.5; m(1, 2) = 0.5;
    m(2, 0) = -2.0; m(2, 1) = -1.0; m(2, 2) = -0.5;
    CHECK(argmax_row(m, 0) == 1);
    CHECK(argmax_row(m, 1) == 0);
    CHECK(argmax_row(m, 2) == 2);
}

TEST_CASE("scorer evaluation flattens conversations in order") {
    const Dataset ds = two_conversation_dataset();

    // Scores utterance k of conversation c as class (gold for c1, wrong for
    // the single c2 row), exercising the flatten + argmax path end to end.
    auto scorer = [](const Conversation& conv) {
        Matrix logits(conv.utterances.size(), 3);
        for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
            const int target = conv.conversation_id == "c1"
                                   ? conv.utterances[k].gold_label
                                   : (conv.utterances[k].gold_label + 1) % 3;
            logits(k, static_cast<std::size_t>(target)) = 5.0;
        }
        return logits;
    };

    EvalReport rep = evaluate(scorer, ds);
    CHECK(rep.total == 3);
    CHECK(rep.split == "val");
    // preds {0,1,0} vs golds {0,1,2}: matches evaluate_predictions directly.
    EvalReport direct = evaluate_predictions({0, 1, 0}, {0, 1, 2},
                                             ds.label_space.classes());
    CHECK(rep.weighted_f1 == direct.weighted_f1);
    CHECK(rep.confusion == direct.confusion);

    SUBCASE("shape violations are caught per conversation") {
        auto bad_rows = [](const Conversation& conv) {
            return Matrix(conv.utterances.size() + 1, 3);
        };
        CHECK_THROWS_AS(evaluate(bad_rows, ds), IntegrityError);
        auto bad_cols = [](const Conversation& conv) {
            return Matrix(conv.utterances.size(), 2);
        };
        CHECK_THROWS_AS(evaluate(bad_cols, ds), IntegrityError);
    }
    SUBCASE("empty dataset is refused") {
        Dataset empty;
        empty.label_space = ds.label_space;
        CHECK_THROWS_AS(evaluate(scorer, empty), DomainError);
    }
}

TEST_CASE("annotator comparison ranks backends by agreement") {
    const std::vector<std::pair<std::string, Sentiment>> oracle{
        {"t0", Sentiment::positive}, {"t1", Sentiment::negative},
        {"t2", Sentiment::neutral},  {"t3", Sentiment::positive},
        {"t4", Sentiment::negative}, {"t5", Sentiment::neutral},
        {"t6", Sentiment::positive}, {"t7", Sentiment::negative},
        {"t8", Sentiment::neutral},  {"t9", Sentiment::positive},
    };
    auto corpus_with_errors = [&](const std::string& backend, std::size_t wrong) {
        PseudoLabeledCorpus c;
        c.backend = backend;
        for (std::size_t i = 0; i < oracle.size(); ++i) {
            Sentiment s = oracle[i].second;
            if (i < wrong)
                s = s == Sentiment::positive ? Sentiment::negative
                                             : Sentiment::positive;
            c.records.push_back({oracle[i].first, "text", s});
        }
        // Shuffled record order must not matter; matching goes through ids.
        std::reverse(c.records.begin(), c.records.end());
        return c;
    };

    const std::vector<OverlapRow> rows =
        compare_annotators({corpus_with_errors("half", 5),
                            corpus_with_errors("sharp", 2)},
                           oracle);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].backend == "sharp");
    CHECK(rows[0].overlap == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(rows[1].backend == "half");
    CHECK(rows[1].overlap == doctest::Approx(0.5).epsilon(1e-12));

    SUBCASE("csv table lists best first") {
        CHECK(overlap_table_csv(rows) == "backend,overlap\nsharp,0.8\nhalf,0.5\n");
    }
    SUBCASE("coverage holes are refused") {
        PseudoLabeledCorpus missing = corpus_with_errors("gappy", 0);
        missing.records.pop_back();
        CHECK_THROWS_AS(compare_annotators({missing}, oracle), IntegrityError);
    }
    SUBCASE("ids outside the oracle are refused") {
        PseudoLabeledCorpus stray = corpus_with_errors("stray", 0);
        stray.records.back().id = "t99";
        CHECK_THROWS_AS(compare_annotators({stray}, oracle), IntegrityError);
    }
    SUBCASE("duplicate oracle ids are refused") {
        auto dup = oracle;
        dup.push_back(oracle.front());
        CHECK_THROWS_AS(compare_annotators({corpus_with_errors("x", 0)}, dup),
                        IntegrityError);
    }
}
