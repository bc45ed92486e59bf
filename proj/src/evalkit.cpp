#include "merits/evalkit.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "json.hpp"

namespace merits {

using nlohmann::ordered_json;

double weighted_f1(const std::vector<int>& preds, const std::vector<int>& golds,
                   std::size_t n_classes) {
    if (preds.size() != golds.size())
        throw DomainError("prediction/gold length mismatch");
    if (preds.empty()) throw DomainError("weighted_f1 needs at least one pair");

    std::vector<long long> tp(n_classes, 0), pred_n(n_classes, 0), gold_n(n_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int p = preds[i], g = golds[i];
        if (p < 0 || g < 0 || static_cast<std::size_t>(p) >= n_classes ||
            static_cast<std::size_t>(g) >= n_classes)
            throw DomainError("class index outside the label space");
        ++pred_n[static_cast<std::size_t>(p)];
        ++gold_n[static_cast<std::size_t>(g)];
        if (p == g) ++tp[static_cast<std::size_t>(p)];
    }

    const double n = static_cast<double>(preds.size());
    double acc = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (gold_n[c] == 0) continue;  // zero support, zero weight
        const double prec =
            pred_n[c] == 0 ? 0.0
                           : static_cast<double>(tp[c]) / static_cast<double>(pred_n[c]);
        const double rec = static_cast<double>(tp[c]) / static_cast<double>(gold_n[c]);
        const double f1 = (prec + rec) == 0.0 ? 0.0 : 2.0 * prec * rec / (prec + rec);
        acc += (static_cast<double>(gold_n[c]) / n) * f1;
    }
    return acc;
}

EvalReport evaluate_predictions(const std::vector<int>& preds,
                                const std::vector<int>& golds,
                                const std::vector<std::string>& class_names) {
    const std::size_t n_classes = class_names.size();
    EvalReport rep;
    rep.total = preds.size();
    rep.confusion.assign(n_classes, std::vector<long long>(n_classes, 0));
    for (std::size_t i = 0; i < preds.size(); ++i)
        ++rep.confusion[static_cast<std::size_t>(golds[i])]
                       [static_cast<std::size_t>(preds[i])];

    for (std::size_t c = 0; c < n_classes; ++c) {
        ClassMetrics m;
        m.label = class_names[c];
        long long tp = rep.confusion[c][c], pred_n = 0, gold_n = 0;
        for (std::size_t k = 0; k < n_classes; ++k) {
            pred_n += rep.confusion[k][c];
            gold_n += rep.confusion[c][k];
        }
        m.support = static_cast<std::size_t>(gold_n);
        m.precision = pred_n == 0 ? 0.0
                                  : static_cast<double>(tp) / static_cast<double>(pred_n);
        m.recall = gold_n == 0 ? 0.0
                               : static_cast<double>(tp) / static_cast<double>(gold_n);
        m.f1 = (m.precision + m.recall) == 0.0
                   ? 0.0
                   : 2.0 * m.precision * m.recall / (m.precision + m.recall);
        rep.per_class.push_back(std::move(m));
    }
    rep.weighted_f1 = weighted_f1(preds, golds, n_classes);
    return rep;
}

std::size_t argmax_row(const Matrix& m, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j)
        if (m(row, j) > m(row, best)) best = j;
    return best;
}

EvalReport evaluate(const ConversationScorer& scorer, const Dataset& ds) {
    if (ds.conversations.empty()) throw DomainError("cannot evaluate an empty dataset");
    std::vector<int> preds, golds;
    for (const Conversation& conv : ds.conversations) {
        const Matrix logits = scorer(conv);
        if (logits.rows() != conv.utterances.size() ||
            logits.cols() != ds.label_space.size())
            throw IntegrityError("scorer shape mismatch for conversation " +
                                 conv.conversation_id);
        for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
            preds.push_back(static_cast<int>(argmax_row(logits, k)));
            golds.push_back(conv.utterances[k].gold_label);
        }
    }
    EvalReport rep = evaluate_predictions(preds, golds, ds.label_space.classes());
    rep.split = to_string(ds.split_tag);
    return rep;
}

std::string EvalReport::to_json() const {
    ordered_json j;
    j["stage"] = stage;
    j["split"] = split;
    j["total"] = total;
    j["weighted_f1"] = weighted_f1;
    ordered_json classes = ordered_json::array();
    for (const ClassMetrics& m : per_class) {
        ordered_json c;
        c["label"] = m.label;
        c["precision"] = m.precision;
        c["recall"] = m.recall;
        c["f1"] = m.f1;
        c["support"] = m.support;
        classes.push_back(std::move(c));
    }
    j["per_class"] = std::move(classes);
    j["confusion"] = confusion;
    return j.dump(2);
}

std::vector<OverlapRow> compare_annotators(
    const std::vector<PseudoLabeledCorpus>& corpora,
    const std::vector<std::pair<std::string, Sentiment>>& oracle) {
    std::map<std::string, Sentiment> gold;
    for (const auto& [id, s] : oracle) gold[id] = s;
    if (gold.size() != oracle.size())
        throw IntegrityError("oracle contains duplicate transcript ids");

    std::vector<OverlapRow> rows;
    for (const PseudoLabeledCorpus& corpus : corpora) {
        if (corpus.records.size() != gold.size())
            throw IntegrityError("corpus \"" + corpus.backend +
                                 "\" does not cover the oracle id universe");
        std::vector<Sentiment> a, b;
        for (const PseudoLabeledRecord& r : corpus.records) {
            auto it = gold.find(r.id);
            if (it == gold.end())
                throw IntegrityError("corpus \"" + corpus.backend +
                                     "\" has an id outside the oracle: " + r.id);
            a.push_back(r.sentiment);
            b.push_back(it->second);
        }
        rows.push_back({corpus.backend, label_overlap(a, b)});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const OverlapRow& x, const OverlapRow& y) {
                         return x.overlap > y.overlap;
                     });
    return rows;
}

std::string overlap_table_csv(const std::vector<OverlapRow>& rows) {
    std::ostringstream out;
    out << "backend,overlap\n";
    for (const OverlapRow& r : rows) out << r.backend << "," << r.overlap << "\n";
    return out.str();
}

}  // namespace merits
