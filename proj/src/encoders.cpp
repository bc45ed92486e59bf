#include "merits/encoders.hpp"

#include <cctype>
#include <iostream>

#include "merits/checkpoint.hpp"
#include "merits/evalkit.hpp"
#include "merits/training_loop.hpp"

namespace merits {

Tokenizer::Tokenizer() : vocab_{"<null>", "<unk>"} {
    lookup_["<null>"] = kNullId;
    lookup_["<unk>"] = kUnkId;
}

std::vector<std::string> Tokenizer::split(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isalnum(c) || c >= 0x80)
            word.push_back(static_cast<char>(std::tolower(c)));
        else
            flush();
    }
    flush();
    return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts) {
    Tokenizer tok;
    for (const std::string& text : texts)
        for (const std::string& w : split(text))
            if (!tok.lookup_.count(w)) {
                tok.lookup_[w] = static_cast<int>(tok.vocab_.size());
                tok.vocab_.push_back(w);
            }
    return tok;
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> vocab) {
    if (vocab.size() < 2 || vocab[0] != "<null>" || vocab[1] != "<unk>")
        throw IntegrityError("tokenizer vocabulary lost its sentinel entries");
    Tokenizer tok;
    tok.vocab_ = std::move(vocab);
    tok.lookup_.clear();
    for (std::size_t i = 0; i < tok.vocab_.size(); ++i)
        tok.lookup_[tok.vocab_[i]] = static_cast<int>(i);
    return tok;
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const std::string& w : split(text)) {
        auto it = lookup_.find(w);
        ids.push_back(it == lookup_.end() ? kUnkId : it->second);
    }
    if (ids.empty()) ids.push_back(kNullId);
    return ids;
}

Stage1Model Stage1Model::text_model(Tokenizer tok, std::size_t n_classes,
                                    std::uint64_t seed, std::size_t embed_dim,
                                    std::size_t hidden, std::size_t out_dim) {
    Stage1Model m;
    m.modality = Modality::text;
    m.n_classes = n_classes;
    m.tokenizer = std::move(tok);
    m.embedding = Parameter("embedding", m.tokenizer.size(), embed_dim);
    m.l1 = nn::Linear("trunk1", embed_dim, hidden);
    m.l2 = nn::Linear("trunk2", hidden, out_dim);
    m.head = nn::Linear("head", out_dim, n_classes);
    nn::Rng rng(seed);
    nn::normal_init(m.embedding, 0.2, rng);
    m.l1.init(rng);
    m.l2.init(rng);
    m.head.init(rng);
    return m;
}

Stage1Model Stage1Model::speech_model(std::size_t input_dim, std::size_t n_classes,
                                      std::uint64_t seed, std::size_t hidden,
                                      std::size_t out_dim) {
    Stage1Model m;
    m.modality = Modality::speech;
    m.n_classes = n_classes;
    m.l1 = nn::Linear("trunk1", input_dim, hidden);
    m.l2 = nn::Linear("trunk2", hidden, out_dim);
    m.head = nn::Linear("head", out_dim, n_classes);
    nn::Rng rng(seed);
    m.l1.init(rng);
    m.l2.init(rng);
    m.head.init(rng);
    return m;
}

std::vector<Parameter*> Stage1Model::parameters() {
    std::vector<Parameter*> out;
    if (modality == Modality::text) out.push_back(&embedding);
    l1.collect(out);
    l2.collect(out);
    head.collect(out);
    return out;
}

ad::Var Stage1Model::embed_rows(ad::Graph& g, ad::Var features) {
    if (features->v().cols() != l1.in_dim())
        throw ConfigError("feature width " + std::to_string(features->v().cols()) +
                          " does not match the trunk input " +
                          std::to_string(l1.in_dim()));
    return g.tanh_op(l2(g, g.tanh_op(l1(g, features))));
}

ad::Var Stage1Model::embed_tokens(ad::Graph& g,
                                  const std::vector<std::vector<int>>& ids) {
    if (modality != Modality::text)
        throw DomainError("token input on a speech model");
    ad::Var table = g.param(embedding);
    std::vector<ad::Var> rows;
    rows.reserve(ids.size());
    for (const auto& utt : ids) rows.push_back(g.embedding_mean(table, utt));
    return embed_rows(g, g.concat_rows(rows));
}

ad::Var Stage1Model::class_logits(ad::Graph& g, ad::Var embedded) {
    return head(g, embedded);
}

Matrix stage1_embed(Stage1Model& model, const Utterance& u, const FeatureStore* store) {
    if (model.modality == Modality::text) {
        return encode_utterance_text(model, u.transcript);
    }
    if (!store) throw ConfigError("speech embedding needs a feature store");
    if (store->dim() != model.l1.in_dim())
        throw ConfigError("feature store width " + std::to_string(store->dim()) +
                          " does not match the trunk input " +
                          std::to_string(model.l1.in_dim()));
    Matrix row = store->lookup_row(u.speech_key);
    return ad::eval([&](ad::Graph& g) { return model.embed_rows(g, g.leaf(row)); });
}

Matrix stage1_embed_conversation(Stage1Model& model, const Conversation& conv,
                                 const FeatureStore* store) {
    if (model.modality == Modality::text) {
        std::vector<std::vector<int>> ids;
        ids.reserve(conv.utterances.size());
        for (const Utterance& u : conv.utterances)
            ids.push_back(model.tokenizer.encode(u.transcript));
        return ad::eval([&](ad::Graph& g) { return model.embed_tokens(g, ids); });
    }
    if (!store) throw ConfigError("speech embedding needs a feature store");
    Matrix feats(conv.utterances.size(), store->dim());
    for (std::size_t k = 0; k < conv.utterances.size(); ++k) {
        const Matrix row = store->lookup_row(conv.utterances[k].speech_key);
        for (std::size_t j = 0; j < store->dim(); ++j) feats(k, j) = row(0, j);
    }
    return ad::eval([&](ad::Graph& g) { return model.embed_rows(g, g.leaf(feats)); });
}

Matrix encode_utterance_text(Stage1Model& model, const std::string& transcript) {
    if (model.modality != Modality::text)
        throw DomainError("encode_utterance_text needs a text model");
    const std::vector<std::vector<int>> ids = {model.tokenizer.encode(transcript)};
    return ad::eval([&](ad::Graph& g) { return model.embed_tokens(g, ids); });
}

std::vector<std::uint8_t> Stage1Model::to_blob() const {
    BlobWriter w;
    w.str(to_string(modality));
    w.u64(n_classes);
    if (modality == Modality::text) {
        w.strings(tokenizer.vocab());
        w.mat(embedding.value);
    }
    w.mat(l1.w.value);
    w.mat(l1.b.value);
    w.mat(l2.w.value);
    w.mat(l2.b.value);
    w.mat(head.w.value);
    w.mat(head.b.value);
    return w.take();
}

Stage1Model Stage1Model::from_blob(const std::vector<std::uint8_t>& blob) {
    BlobReader r(blob);
    Stage1Model m;
    const std::string mod = r.str();
    m.modality = mod == "text" ? Modality::text : Modality::speech;
    m.n_classes = r.u64();
    if (m.modality == Modality::text) {
        m.tokenizer = Tokenizer::from_vocab(r.strings());
        m.embedding = Parameter("embedding", 0, 0);
        m.embedding.value = r.mat();
        m.embedding.grad = Matrix(m.embedding.value.rows(), m.embedding.value.cols());
    }
    auto read_linear = [&r](const std::string& name) {
        nn::Linear lin;
        lin.w = Parameter(name + ".w", 0, 0);
        lin.w.value = r.mat();
        lin.w.grad = Matrix(lin.w.value.rows(), lin.w.value.cols());
        lin.b = Parameter(name + ".b", 0, 0);
        lin.b.value = r.mat();
        lin.b.grad = Matrix(lin.b.value.rows(), lin.b.value.cols());
        return lin;
    };
    m.l1 = read_linear("trunk1");
    m.l2 = read_linear("trunk2");
    m.head = read_linear("head");
    if (!r.done()) throw ParseError("trailing bytes in utterance model blob");
    return m;
}

namespace {

struct TextItems {
    std::vector<std::vector<int>> ids;
    std::vector<int> labels;
};

TextItems gather_text_items(const Dataset& ds, const Tokenizer& tok) {
    TextItems items;
    for (const Conversation& c : ds.conversations)
        for (const Utterance& u : c.utterances) {
            items.ids.push_back(tok.encode(u.transcript));
            items.labels.push_back(u.gold_label);
        }
    return items;
}

struct SpeechItems {
    Matrix feats;  // n x d_s
    std::vector<int> labels;
};

SpeechItems gather_speech_items(const Dataset& ds, const FeatureStore& store) {
    SpeechItems items;
    items.feats = Matrix(ds.utterance_count(), store.dim());
    std::size_t at = 0;
    for (const Conversation& c : ds.conversations)
        for (const Utterance& u : c.utterances) {
            const Matrix row = store.lookup_row(u.speech_key);
            for (std::size_t j = 0; j < store.dim(); ++j) items.feats(at, j) = row(0, j);
            items.labels.push_back(u.gold_label);
            ++at;
        }
    return items;
}

double dataset_f1(Stage1Model& model, const FeatureStore* store, const Dataset& ds) {
    return evaluate(stage1_scorer(model, store), ds).weighted_f1;
}

}  // namespace

std::function<Matrix(const Conversation&)> stage1_scorer(Stage1Model& model,
                                                         const FeatureStore* store) {
    return [&model, store](const Conversation& conv) {
        Matrix embedded = stage1_embed_conversation(model, conv, store);
        return ad::eval([&](ad::Graph& g) {
            return model.class_logits(g, g.leaf(std::move(embedded)));
        });
    };
}

PretrainResult pretrain_text_encoder(const PseudoLabeledCorpus& corpus,
                                     const TrainConfig& cfg) {
    if (corpus.records.empty())
        throw DomainError("pretraining corpus has no records");

    bool seen[3] = {false, false, false};
    std::vector<std::string> texts;
    for (const PseudoLabeledRecord& r : corpus.records) {
        seen[static_cast<int>(r.sentiment)] = true;
        texts.push_back(r.text);
    }
    if ((seen[0] ? 1 : 0) + (seen[1] ? 1 : 0) + (seen[2] ? 1 : 0) < 2)
        std::cerr << "warning: pretraining corpus covers a single sentiment class\n";

    PretrainResult result;
    result.model = Stage1Model::text_model(Tokenizer::build(texts), 3, cfg.seed);
    Stage1Model& model = result.model;

    // Seeded 80/20 split over record order.
    std::vector<std::size_t> idx(corpus.records.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 split_rng(cfg.seed);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    const std::size_t n_val = std::max<std::size_t>(1, idx.size() / 5);
    std::vector<std::vector<int>> train_ids, val_ids;
    std::vector<int> train_labels, val_labels;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const PseudoLabeledRecord& r = corpus.records[idx[i]];
        const bool is_val = i < n_val;
        auto& ids = is_val ? val_ids : train_ids;
        auto& labels = is_val ? val_labels : train_labels;
        ids.push_back(model.tokenizer.encode(r.text));
        labels.push_back(static_cast<int>(r.sentiment));
    }
    if (train_ids.empty()) {  // single-record corpus degenerates to val==train
        train_ids = val_ids;
        train_labels = val_labels;
    }

    auto params = model.parameters();
    auto val_preds = [&] {
        std::vector<int> preds;
        Matrix logits = ad::eval([&](ad::Graph& g) {
            return model.class_logits(g, model.embed_tokens(g, val_ids));
        });
        for (std::size_t i = 0; i < val_ids.size(); ++i)
            preds.push_back(static_cast<int>(argmax_row(logits, i)));
        return preds;
    };

    result.history = run_training(
        train_ids.size(), cfg, params,
        [&](const std::vector<std::size_t>& batch) {
            std::vector<std::vector<int>> ids;
            std::vector<int> labels;
            for (std::size_t i : batch) {
                ids.push_back(train_ids[i]);
                labels.push_back(train_labels[i]);
            }
            ad::Graph g;
            ad::Var loss = g.cross_entropy(model.class_logits(g, model.embed_tokens(g, ids)),
                                           labels, nullptr,
                                           static_cast<double>(batch.size()));
            const double value = loss->v()(0, 0);
            g.backward(loss);
            return value;
        },
        [&] { return weighted_f1(val_preds(), val_labels, 3); });

    const std::vector<int> preds = val_preds();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == val_labels[i]) ++correct;
    result.val_accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
    return result;
}

Stage1TrainResult stage1_train(Modality modality, const Dataset& train,
                               const Dataset& val, const FeatureStore* store,
                               const TrainConfig& cfg, const Stage1Model* init_from) {
    if (train.label_space.name() != val.label_space.name())
        throw ConfigError("train and val label spaces differ");
    const std::size_t n_classes = train.label_space.size();

    Stage1TrainResult result;
    if (modality == Modality::text) {
        if (init_from) {
            if (init_from->modality != Modality::text)
                throw ConfigError("text training cannot start from a speech model");
            result.model = Stage1Model::text_model(init_from->tokenizer, n_classes,
                                                   cfg.seed,
                                                   init_from->embedding.value.cols(),
                                                   init_from->l1.out_dim(),
                                                   init_from->l2.out_dim());
            result.model.embedding.value = init_from->embedding.value;
            result.model.l1.w.value = init_from->l1.w.value;
            result.model.l1.b.value = init_from->l1.b.value;
            result.model.l2.w.value = init_from->l2.w.value;
            result.model.l2.b.value = init_from->l2.b.value;
        } else {
            std::vector<std::string> texts;
            for (const Conversation& c : train.conversations)
                for (const Utterance& u : c.utterances) texts.push_back(u.transcript);
            result.model =
                Stage1Model::text_model(Tokenizer::build(texts), n_classes, cfg.seed);
        }
    } else {
        if (init_from)
            throw ConfigError("warm starts only apply to the text pathway");
        if (!store) throw ConfigError("speech training needs a feature store");
        result.model = Stage1Model::speech_model(store->dim(), n_classes, cfg.seed);
    }
    Stage1Model& model = result.model;
    auto params = model.parameters();

    if (modality == Modality::text) {
        TextItems items = gather_text_items(train, model.tokenizer);
        result.history = run_training(
            items.ids.size(), cfg, params,
            [&](const std::vector<std::size_t>& batch) {
                std::vector<std::vector<int>> ids;
                std::vector<int> labels;
                for (std::size_t i : batch) {
                    ids.push_back(items.ids[i]);
                    labels.push_back(items.labels[i]);
                }
                ad::Graph g;
                ad::Var loss = g.cross_entropy(
                    model.class_logits(g, model.embed_tokens(g, ids)), labels, nullptr,
                    static_cast<double>(batch.size()));
                const double value = loss->v()(0, 0);
                g.backward(loss);
                return value;
            },
            [&] { return dataset_f1(model, store, val); });
    } else {
        SpeechItems items = gather_speech_items(train, *store);
        result.history = run_training(
            items.labels.size(), cfg, params,
            [&](const std::vector<std::size_t>& batch) {
                Matrix feats(batch.size(), items.feats.cols());
                std::vector<int> labels;
                for (std::size_t bi = 0; bi < batch.size(); ++bi) {
                    for (std::size_t j = 0; j < items.feats.cols(); ++j)
                        feats(bi, j) = items.feats(batch[bi], j);
                    labels.push_back(items.labels[batch[bi]]);
                }
                ad::Graph g;
                ad::Var loss = g.cross_entropy(
                    model.class_logits(g, model.embed_rows(g, g.leaf(std::move(feats)))),
                    labels, nullptr, static_cast<double>(batch.size()));
                const double value = loss->v()(0, 0);
                g.backward(loss);
                return value;
            },
            [&] { return dataset_f1(model, store, val); });
    }
    return result;
}

}  // namespace merits
