#pragma once

#include <functional>
#include <string>
#include <vector>

#include "merits/annotator.hpp"
#include "merits/corpus.hpp"
#include "merits/matrix.hpp"

namespace merits {

struct ClassMetrics {
    std::string label;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalReport {
    double weighted_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<long long>> confusion;  // rows gold, cols predicted
    std::size_t total = 0;
    std::string split;
    std::string stage;
    std::string to_json() const;
};

// Support-weighted mean of per-class F1. Classes with zero support weigh
// nothing; every 0/0 ratio is taken as 0.
double weighted_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                   std::size_t n_classes);

EvalReport evaluate_predictions(const std::vector<int>& preds,
                                const std::vector<int>& golds,
                                const std::vector<std::string>& class_names);

// Lowest index wins ties, matching evaluate()'s argmax.
std::size_t argmax_row(const Matrix& m, std::size_t row);

// Runs a conversation-level scorer over the whole dataset. The callable
// returns one logit row per utterance.
using ConversationScorer = std::function<Matrix(const Conversation&)>;

EvalReport evaluate(const ConversationScorer& scorer, const Dataset& ds);

struct OverlapRow {
    std::string backend;
    double overlap = 0.0;
};

// Agreement of each pseudo-label corpus against gold sentiment, one row per
// backend, best first. All corpora must cover exactly the oracle's ids.
std::vector<OverlapRow> compare_annotators(
    const std::vector<PseudoLabeledCorpus>& corpora,
    const std::vector<std::pair<std::string, Sentiment>>& oracle);

std::string overlap_table_csv(const std::vector<OverlapRow>& rows);

}  // namespace merits
