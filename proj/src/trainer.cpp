#include "merits/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "json.hpp"

#include "merits/checkpoint.hpp"
#include "merits/evalkit.hpp"
#include "merits/hash.hpp"
#include "merits/training_loop.hpp"

namespace merits {

std::uint64_t config_fingerprint(const TrainConfig& c) {
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "epochs=%d;lr=%.17g;batch=%d;wd=%.17g;clip=%.17g;patience=%d;seed=%llu",
                  c.epochs, c.learning_rate, c.batch_size, c.weight_decay, c.grad_clip,
                  c.patience, static_cast<unsigned long long>(c.seed));
    return fnv1a64(buf);
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t at = 0;
    while (at <= s.size()) {
        std::size_t comma = s.find(',', at);
        if (comma == std::string::npos) comma = s.size();
        std::string item = trim(s.substr(at, comma - at));
        if (!item.empty()) out.push_back(item);
        at = comma + 1;
    }
    return out;
}

const std::vector<std::string> kStageOrder = {"pretrain", "stage1", "stage2", "stage3"};

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open experiment config " + file.string());

    ExperimentConfig cfg;
    std::string line, section;
    int lineno = 0;
    auto fail = [&](const std::string& msg) -> void {
        throw ConfigError(file.string() + ":" + std::to_string(lineno) + ": " + msg);
    };
    auto parse_int = [&](const std::string& v) {
        std::size_t used = 0;
        int out = 0;
        try {
            out = std::stoi(v, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != v.size()) fail("expected an integer, got \"" + v + "\"");
        return out;
    };
    auto parse_real = [&](const std::string& v) {
        std::size_t used = 0;
        double out = 0.0;
        try {
            out = std::stod(v, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != v.size()) fail("expected a number, got \"" + v + "\"");
        return out;
    };
    auto apply_train_key = [&](TrainConfig& t, const std::string& key,
                               const std::string& value) {
        if (key == "epochs") t.epochs = parse_int(value);
        else if (key == "learning_rate") t.learning_rate = parse_real(value);
        else if (key == "batch_size") t.batch_size = parse_int(value);
        else if (key == "weight_decay") t.weight_decay = parse_real(value);
        else if (key == "grad_clip") t.grad_clip = parse_real(value);
        else if (key == "patience") t.patience = parse_int(value);
        else if (key == "seed") t.seed = static_cast<std::uint64_t>(parse_int(value));
        else fail("unknown key \"" + key + "\" in [" + section + "]");
    };

    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail("unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section != "data" && section != "pretrain" && section != "train" &&
                section != "pipeline")
                fail("unknown section [" + section + "]");
            continue;
        }
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (section.empty()) fail("key before any section header");
        if (key.empty()) fail("empty key");

        if (section == "data") {
            if (key == "train") cfg.train_file = value;
            else if (key == "val") cfg.val_file = value;
            else if (key == "test") cfg.test_file = value;
            else if (key == "features") cfg.features_file = value;
            else if (key == "label_space") cfg.label_space = value;
            else fail("unknown key \"" + key + "\" in [data]");
        } else if (section == "pretrain") {
            if (key == "corpus") cfg.pretrain_corpus = value;
            else apply_train_key(cfg.pretrain, key, value);
        } else if (section == "train") {
            apply_train_key(cfg.train, key, value);
        } else {
            if (key == "stages") cfg.stages = split_list(value);
            else if (key == "fusion") cfg.fusion = fusion_kind_from_string(value);
            else fail("unknown key \"" + key + "\" in [pipeline]");
        }
    }

    if (cfg.train_file.empty()) throw ConfigError("experiment config missing data.train");
    if (cfg.val_file.empty()) throw ConfigError("experiment config missing data.val");
    if (cfg.test_file.empty()) throw ConfigError("experiment config missing data.test");
    if (cfg.features_file.empty())
        throw ConfigError("experiment config missing data.features");
    for (const TrainConfig* t : {&cfg.pretrain, &cfg.train}) {
        if (t->epochs < 0) throw ConfigError("epochs must be >= 0");
        if (t->learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
        if (t->batch_size < 1) throw ConfigError("batch_size must be >= 1");
    }
    for (const std::string& st : cfg.stages) {
        if (std::find(kStageOrder.begin(), kStageOrder.end(), st) == kStageOrder.end())
            throw ConfigError("unknown stage \"" + st + "\" in pipeline.stages");
    }
    if (std::find(cfg.stages.begin(), cfg.stages.end(), "pretrain") != cfg.stages.end() &&
        cfg.pretrain_corpus.empty())
        throw ConfigError("pipeline.stages includes pretrain but [pretrain] has no corpus");
    return cfg;
}

PipelineData load_pipeline_data(const ExperimentConfig& cfg) {
    const LabelSpace space = LabelSpace::by_name(cfg.label_space);
    PipelineData data;
    data.train = load_conversations(cfg.train_file, space);
    data.train.split_tag = SplitTag::train;
    data.val = load_conversations(cfg.val_file, space);
    data.val.split_tag = SplitTag::val;
    data.test = load_conversations(cfg.test_file, space);
    data.test.split_tag = SplitTag::test;
    data.store = FeatureStore::load(cfg.features_file);
    return data;
}

std::string ExperimentReport::to_json() const {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const StageRow& r : rows) {
        nlohmann::ordered_json row;
        row["stage"] = r.stage;
        row["modality"] = r.modality;
        row["val_f1"] = r.val_f1;
        row["test_f1"] = r.test_f1;
        row["best_epoch"] = r.best_epoch;
        row["epochs"] = r.epochs;
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

std::string ExperimentReport::to_table() const {
    char buf[128];
    std::string out = "stage   modality  val_f1   test_f1  best_epoch\n";
    for (const StageRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-7s %-9s %-8.4f %-8.4f %d/%d\n", r.stage.c_str(),
                      r.modality.c_str(), r.val_f1, r.test_f1, r.best_epoch, r.epochs);
        out += buf;
    }
    return out;
}

std::string ExperimentReport::to_csv() const {
    char buf[128];
    std::string out = "stage,modality,val_f1,test_f1,best_epoch,epochs\n";
    for (const StageRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%d,%d\n", r.stage.c_str(),
                      r.modality.c_str(), r.val_f1, r.test_f1, r.best_epoch, r.epochs);
        out += buf;
    }
    return out;
}

namespace {

int modality_rank(const std::string& m) { return m == "speech" ? 0 : m == "text" ? 1 : 2; }

void sort_rows(std::vector<StageRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const StageRow& a, const StageRow& b) {
        if (modality_rank(a.modality) != modality_rank(b.modality))
            return modality_rank(a.modality) < modality_rank(b.modality);
        return a.stage < b.stage;
    });
}

StageRow make_row(const std::string& stage, const std::string& modality,
                  const TrainHistory& hist, const ConversationScorer& scorer,
                  const PipelineData& data) {
    StageRow row;
    row.stage = stage;
    row.modality = modality;
    row.val_f1 = evaluate(scorer, data.val).weighted_f1;
    row.test_f1 = evaluate(scorer, data.test).weighted_f1;
    row.best_epoch = hist.best_epoch + 1;
    row.epochs = static_cast<int>(hist.epochs.size());
    return row;
}

}  // namespace

ExperimentReport run_pipeline(const ExperimentConfig& cfg,
                              const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    PipelineData data = load_pipeline_data(cfg);

    std::vector<std::string> stages;
    for (const std::string& st : kStageOrder)
        if (std::find(cfg.stages.begin(), cfg.stages.end(), st) != cfg.stages.end())
            stages.push_back(st);

    auto ckpt_path = [&](const std::string& stage, const std::string& modality) {
        return out_dir / (stage + "_" + modality + ".ckpt");
    };
    auto require = [&](const std::filesystem::path& p, const std::string& needed_by) {
        if (!std::filesystem::exists(p))
            throw DependencyError(needed_by + " needs " + p.filename().string() +
                                  "; run the earlier stage first");
    };

    // Snapshots of every checkpoint a stage reads; re-verified after each
    // training stage so freezing violations cannot pass silently.
    std::vector<std::pair<std::filesystem::path, StageCheckpoint>> frozen;
    auto note_frozen = [&](const std::filesystem::path& p) {
        frozen.emplace_back(p, load_checkpoint(p));
    };
    auto check_frozen = [&] {
        for (const auto& [p, before] : frozen) {
            if (!verify_frozen(before, load_checkpoint(p)))
                throw IntegrityError("frozen checkpoint changed during training: " +
                                     p.string());
        }
    };

    ExperimentReport report;
    for (const std::string& st : stages) {
        if (st == "pretrain") {
            if (cfg.pretrain_corpus.empty())
                throw ConfigError("pretrain stage requested without [pretrain] corpus");
            PseudoLabeledCorpus corpus = load_pseudo_corpus(cfg.pretrain_corpus);
            PretrainResult pre = pretrain_text_encoder(corpus, cfg.pretrain);
            save_checkpoint(StageCheckpoint::wrap("pretrain", "text",
                                                  config_fingerprint(cfg.pretrain),
                                                  pre.model.to_blob()),
                            ckpt_path("pretrain", "text"));
        } else if (st == "stage1") {
            Stage1Model pre_model;
            const Stage1Model* init = nullptr;
            const auto pre_path = ckpt_path("pretrain", "text");
            if (std::filesystem::exists(pre_path)) {
                note_frozen(pre_path);
                pre_model = Stage1Model::from_blob(load_checkpoint(pre_path).blob);
                init = &pre_model;
            }
            for (Modality m : {Modality::speech, Modality::text}) {
                Stage1TrainResult r =
                    stage1_train(m, data.train, data.val, &data.store, cfg.train,
                                 m == Modality::text ? init : nullptr);
                save_checkpoint(StageCheckpoint::wrap("stage1", to_string(m),
                                                      config_fingerprint(cfg.train),
                                                      r.model.to_blob()),
                                ckpt_path("stage1", to_string(m)));
                report.rows.push_back(make_row("stage1", to_string(m), r.history,
                                               stage1_scorer(r.model, &data.store),
                                               data));
            }
            check_frozen();
        } else if (st == "stage2") {
            for (Modality m : {Modality::speech, Modality::text}) {
                const auto p1 = ckpt_path("stage1", to_string(m));
                require(p1, "stage2");
                note_frozen(p1);
                Stage1Model s1 = Stage1Model::from_blob(load_checkpoint(p1).blob);
                Stage2TrainResult r =
                    stage2_train(s1, data.train, data.val, &data.store, cfg.train);
                save_checkpoint(StageCheckpoint::wrap("stage2", to_string(m),
                                                      config_fingerprint(cfg.train),
                                                      r.model.to_blob()),
                                ckpt_path("stage2", to_string(m)));
                report.rows.push_back(make_row("stage2", to_string(m), r.history,
                                               stage2_scorer(s1, r.model, &data.store),
                                               data));
            }
            check_frozen();
        } else if (st == "stage3") {
            for (const std::string& stg : {std::string("stage1"), std::string("stage2")})
                for (Modality m : {Modality::speech, Modality::text}) {
                    require(ckpt_path(stg, to_string(m)), "stage3");
                    note_frozen(ckpt_path(stg, to_string(m)));
                }
            Stage1Model text1 =
                Stage1Model::from_blob(load_checkpoint(ckpt_path("stage1", "text")).blob);
            Stage1Model speech1 = Stage1Model::from_blob(
                load_checkpoint(ckpt_path("stage1", "speech")).blob);
            Stage2Model text2 =
                Stage2Model::from_blob(load_checkpoint(ckpt_path("stage2", "text")).blob);
            Stage2Model speech2 = Stage2Model::from_blob(
                load_checkpoint(ckpt_path("stage2", "speech")).blob);
            FrozenPathway path{&text1, &speech1, &text2, &speech2, &data.store};
            Stage3TrainResult r =
                stage3_train(path, data.train, data.val, cfg.train, cfg.fusion);
            save_checkpoint(StageCheckpoint::wrap("stage3", "fused",
                                                  config_fingerprint(cfg.train),
                                                  r.model.to_blob()),
                            ckpt_path("stage3", "fused"));
            report.rows.push_back(make_row("stage3", "fused", r.history,
                                           stage3_scorer(path, r.model), data));
            check_frozen();
        }
    }
    sort_rows(report.rows);
    return report;
}

MergedTrainResult merged_stage_train(Stage1Model& text1, Stage1Model& speech1,
                                     const Dataset& train, const Dataset& val,
                                     const FeatureStore* store, const TrainConfig& cfg,
                                     FusionKind kind) {
    if (text1.modality != Modality::text || speech1.modality != Modality::speech)
        throw ConfigError("merged training expects one text and one speech trunk");

    Stage2Config c2;
    c2.n_classes = train.label_space.size();
    MergedTrainResult result{
        Stage2Model::create(Modality::speech, c2, cfg.seed),
        Stage2Model::create(Modality::text, c2, cfg.seed + 1),
        Stage3Model::create(kind, c2.feature_dim(), train.label_space.size(),
                            CoAttentionConfig{}, cfg.seed + 2),
        {}};

    std::vector<Parameter*> params = result.speech2.parameters();
    for (Parameter* p : result.text2.parameters()) params.push_back(p);
    for (Parameter* p : result.fused.parameters()) params.push_back(p);

    struct Pair {
        Matrix speech, text;
        std::vector<int> labels;
    };
    std::vector<Pair> prep;
    for (const Conversation& conv : train.conversations) {
        Pair pr;
        pr.speech = stage1_sequence(speech1, conv, store).matrix;
        pr.text = stage1_sequence(text1, conv, store).matrix;
        for (const Utterance& u : conv.utterances) pr.labels.push_back(u.gold_label);
        prep.push_back(std::move(pr));
    }

    FrozenPathway path{&text1, &speech1, &result.text2, &result.speech2, store};
    result.history = run_training(
        prep.size(), cfg, params,
        [&](const std::vector<std::size_t>& batch) {
            std::size_t total = 0;
            for (std::size_t i : batch) total += prep[i].labels.size();
            ad::Graph g;
            ad::Var loss = nullptr;
            for (std::size_t i : batch) {
                std::vector<bool> mask(prep[i].labels.size(), true);
                ad::Var fs =
                    result.speech2.forward(g, g.leaf(prep[i].speech), mask).features;
                ad::Var ft = result.text2.forward(g, g.leaf(prep[i].text), mask).features;
                ad::Var z = result.fused.logits(g, fs, ft, mask);
                ad::Var part = g.cross_entropy(z, prep[i].labels, nullptr,
                                               static_cast<double>(total));
                loss = loss ? g.add(loss, part) : part;
            }
            const double value = loss->v()(0, 0);
            g.backward(loss);
            return value;
        },
        [&] { return evaluate(stage3_scorer(path, result.fused), val).weighted_f1; });
    return result;
}

Stage1Pair train_stage1_pair(const PipelineData& data, const TrainConfig& cfg) {
    return Stage1Pair{
        stage1_train(Modality::text, data.train, data.val, &data.store, cfg).model,
        stage1_train(Modality::speech, data.train, data.val, &data.store, cfg).model};
}

ArmResult hierarchical_arm(Stage1Pair& s1, const PipelineData& data,
                           const TrainConfig& cfg, FusionKind kind) {
    Stage2TrainResult speech2 =
        stage2_train(s1.speech, data.train, data.val, &data.store, cfg);
    Stage2TrainResult text2 = stage2_train(s1.text, data.train, data.val, &data.store, cfg);
    FrozenPathway path{&s1.text, &s1.speech, &text2.model, &speech2.model, &data.store};
    Stage3TrainResult s3 = stage3_train(path, data.train, data.val, cfg, kind);
    auto scorer = stage3_scorer(path, s3.model);
    return {evaluate(scorer, data.val).weighted_f1,
            evaluate(scorer, data.test).weighted_f1};
}

ArmResult merged_arm(Stage1Pair& s1, const PipelineData& data, const TrainConfig& cfg,
                     FusionKind kind) {
    MergedTrainResult m =
        merged_stage_train(s1.text, s1.speech, data.train, data.val, &data.store, cfg, kind);
    FrozenPathway path{&s1.text, &s1.speech, &m.text2, &m.speech2, &data.store};
    auto scorer = stage3_scorer(path, m.fused);
    return {evaluate(scorer, data.val).weighted_f1,
            evaluate(scorer, data.test).weighted_f1};
}

std::string AblationReport::to_json() const {
    nlohmann::ordered_json j;
    j["study"] = study;
    j["rows"] = nlohmann::ordered_json::array();
    for (const AblationRow& r : rows) {
        nlohmann::ordered_json row;
        row["arm"] = r.arm;
        row["seed"] = r.seed;
        row["val_f1"] = r.val_f1;
        row["test_f1"] = r.test_f1;
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

std::string AblationReport::to_csv() const {
    char buf[96];
    std::string out = "arm,seed,val_f1,test_f1\n";
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f\n", r.arm.c_str(),
                      static_cast<unsigned long long>(r.seed), r.val_f1, r.test_f1);
        out += buf;
    }
    return out;
}

std::string AblationReport::to_table() const {
    char buf[96];
    std::string out = "arm            seed  val_f1   test_f1\n";
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-14s %-5llu %-8.4f %-8.4f\n", r.arm.c_str(),
                      static_cast<unsigned long long>(r.seed), r.val_f1, r.test_f1);
        out += buf;
    }
    return out;
}

AblationReport run_merged_ablation(const PipelineData& data, const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   FusionKind kind) {
    AblationReport rep;
    rep.study = "merged";
    for (std::uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        Stage1Pair s1 = train_stage1_pair(data, cfg);
        const ArmResult h = hierarchical_arm(s1, data, cfg, kind);
        const ArmResult m = merged_arm(s1, data, cfg, kind);
        rep.rows.push_back({"hierarchical", seed, h.val_f1, h.test_f1});
        rep.rows.push_back({"merged", seed, m.val_f1, m.test_f1});
    }
    return rep;
}

AblationReport run_fusion_ablation(const PipelineData& data, const TrainConfig& cfg) {
    AblationReport rep;
    rep.study = "fusion";
    Stage1Pair s1 = train_stage1_pair(data, cfg);
    Stage2TrainResult speech2 =
        stage2_train(s1.speech, data.train, data.val, &data.store, cfg);
    Stage2TrainResult text2 = stage2_train(s1.text, data.train, data.val, &data.store, cfg);
    FrozenPathway path{&s1.text, &s1.speech, &text2.model, &speech2.model, &data.store};
    for (FusionKind kind : {FusionKind::coattention, FusionKind::concat}) {
        Stage3TrainResult r = stage3_train(path, data.train, data.val, cfg, kind);
        auto scorer = stage3_scorer(path, r.model);
        rep.rows.push_back({to_string(kind), cfg.seed,
                            evaluate(scorer, data.val).weighted_f1,
                            evaluate(scorer, data.test).weighted_f1});
    }
    return rep;
}

std::string PretrainStudy::to_json() const {
    nlohmann::ordered_json j;
    j["study"] = "pretrain";
    j["target_f1"] = target_f1;
    j["rows"] = nlohmann::ordered_json::array();
    for (const PretrainStudyRow& r : rows) {
        nlohmann::ordered_json row;
        row["arm"] = r.arm;
        row["seed"] = r.seed;
        row["epochs_to_target"] = r.epochs_to_target;
        row["best_val_f1"] = r.best_val_f1;
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

std::string PretrainStudy::to_csv() const {
    char buf[96];
    std::string out = "arm,seed,epochs_to_target,best_val_f1\n";
    for (const PretrainStudyRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%d,%.6f\n", r.arm.c_str(),
                      static_cast<unsigned long long>(r.seed), r.epochs_to_target,
                      r.best_val_f1);
        out += buf;
    }
    return out;
}

PretrainStudy run_pretrain_study(const PseudoLabeledCorpus& corpus,
                                 const PipelineData& data,
                                 const TrainConfig& pretrain_cfg,
                                 const TrainConfig& downstream_cfg, double target_f1,
                                 const std::vector<std::uint64_t>& seeds) {
    PretrainStudy study;
    study.target_f1 = target_f1;
    for (std::uint64_t seed : seeds) {
        TrainConfig pc = pretrain_cfg;
        pc.seed = seed;
        TrainConfig dc = downstream_cfg;
        dc.seed = seed;
        PretrainResult pre = pretrain_text_encoder(corpus, pc);
        Stage1TrainResult warm =
            stage1_train(Modality::text, data.train, data.val, &data.store, dc, &pre.model);
        Stage1TrainResult cold =
            stage1_train(Modality::text, data.train, data.val, &data.store, dc, nullptr);
        study.rows.push_back({"pretrained", seed, warm.history.epochs_to_reach(target_f1),
                              warm.history.best_val_f1});
        study.rows.push_back({"random", seed, cold.history.epochs_to_reach(target_f1),
                              cold.history.best_val_f1});
    }
    return study;
}

}  // namespace merits
