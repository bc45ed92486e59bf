#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "merits/checkpoint.hpp"
#include "merits/evalkit.hpp"
#include "merits/synthetic.hpp"
#include "merits/trainer.hpp"

namespace {

using namespace merits;

void write_text(const std::filesystem::path& file, const std::string& content) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + file.string());
    out << content;
}

std::vector<TranscriptRecord> load_transcripts(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open transcripts file " + file.string());
    std::vector<TranscriptRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(file.string() + ":" + std::to_string(lineno) + ": " +
                             e.what());
        }
        if (!j.contains("id") || !j.contains("text"))
            throw ParseError(file.string() + ":" + std::to_string(lineno) +
                             ": transcript records need id and text");
        out.push_back({j["id"].get<std::string>(), j["text"].get<std::string>()});
    }
    return out;
}

std::string canonical_stage(std::string s) {
    if (s == "0" || s == "pretrain") return "pretrain";
    if (s == "1" || s == "stage1") return "stage1";
    if (s == "2" || s == "stage2") return "stage2";
    if (s == "3" || s == "stage3") return "stage3";
    throw ConfigError("unknown stage \"" + s + "\"");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::size_t at = 0;
    while (at <= s.size()) {
        std::size_t comma = s.find(',', at);
        if (comma == std::string::npos) comma = s.size();
        const std::string item = s.substr(at, comma - at);
        if (!item.empty()) {
            try {
                out.push_back(std::stoull(item));
            } catch (const std::exception&) {
                throw ConfigError("bad seed \"" + item + "\" in seed list");
            }
        }
        at = comma + 1;
    }
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

struct PrepareArgs {
    std::string task;
    std::string out;
    std::uint64_t seed = 7;
    int train_conversations = -1;
    int val_conversations = -1;
    int test_conversations = -1;
};

void run_prepare(const PrepareArgs& a) {
    SyntheticSpec spec =
        SyntheticSpec::defaults_for(synthetic_task_from_string(a.task), a.seed);
    if (a.train_conversations >= 0)
        spec.train_conversations = static_cast<std::size_t>(a.train_conversations);
    if (a.val_conversations >= 0)
        spec.val_conversations = static_cast<std::size_t>(a.val_conversations);
    if (a.test_conversations >= 0)
        spec.test_conversations = static_cast<std::size_t>(a.test_conversations);

    const SyntheticBundle bundle = make_synthetic(spec);
    const std::filesystem::path dir(a.out);
    write_bundle(bundle, dir);

    std::string ini;
    ini += "[data]\n";
    ini += "train = " + (dir / "train.jsonl").string() + "\n";
    ini += "val = " + (dir / "val.jsonl").string() + "\n";
    ini += "test = " + (dir / "test.jsonl").string() + "\n";
    ini += "features = " + (dir / "features.jsonl").string() + "\n";
    ini += "label_space = " + bundle.train.label_space.name() + "\n";
    write_text(dir / "exp.ini", ini);

    std::cout << "wrote " << to_string(spec.task) << " fixtures ("
              << bundle.train.conversations.size() << "/" << bundle.val.conversations.size()
              << "/" << bundle.test.conversations.size() << " conversations) under "
              << dir.string() << "\n";
}

struct AnnotateArgs {
    std::string in, backend = "mock", cache, out;
    int retries = 2;
    int concurrency = 1;
};

void run_annotate(const AnnotateArgs& a) {
    const std::vector<TranscriptRecord> transcripts = load_transcripts(a.in);
    std::unique_ptr<LlmClient> client = make_client(a.backend);
    AnnotationCache cache{std::filesystem::path(a.cache)};
    RetryPolicy policy;
    policy.max_retries = a.retries;
    policy.concurrency = a.concurrency;

    const PseudoLabeledCorpus corpus = annotate(transcripts, *client, cache, policy);
    std::filesystem::create_directories(a.out);
    const auto file = std::filesystem::path(a.out) / ("pseudo_" + a.backend + ".jsonl");
    save_pseudo_corpus(corpus, file);
    std::cout << "labeled " << corpus.records.size() << " transcripts with "
              << corpus.backend << " (" << corpus.failed_ids.size() << " failed) -> "
              << file.string() << "\n";
}

struct PretrainArgs {
    std::string corpus, out;
    TrainConfig cfg = [] {
        TrainConfig c;
        c.epochs = 10;
        return c;
    }();
};

void run_pretrain(const PretrainArgs& a) {
    const PseudoLabeledCorpus corpus = load_pseudo_corpus(a.corpus);
    const PretrainResult result = pretrain_text_encoder(corpus, a.cfg);
    std::filesystem::create_directories(a.out);
    const auto file = std::filesystem::path(a.out) / "pretrain_text.ckpt";
    save_checkpoint(StageCheckpoint::wrap("pretrain", "text", config_fingerprint(a.cfg),
                                          result.model.to_blob()),
                    file);
    std::cout << "pre-trained text encoder on " << corpus.records.size()
              << " pseudo-labeled transcripts; held-out accuracy " << result.val_accuracy
              << " -> " << file.string() << "\n";
}

struct TrainArgs {
    std::string config, out, stage;
    std::int64_t seed = -1;
};

void run_train(const TrainArgs& a) {
    ExperimentConfig cfg = load_experiment_config(a.config);
    if (!a.stage.empty()) cfg.stages = {canonical_stage(a.stage)};
    if (a.seed >= 0) {
        cfg.train.seed = static_cast<std::uint64_t>(a.seed);
        cfg.pretrain.seed = static_cast<std::uint64_t>(a.seed);
    }
    const ExperimentReport report = run_pipeline(cfg, a.out);
    write_text(std::filesystem::path(a.out) / "report.json", report.to_json());
    write_text(std::filesystem::path(a.out) / "report.txt", report.to_table());
    std::cout << report.to_table();
}

struct EvaluateArgs {
    std::string config, experiment, stage = "stage3", modality = "fused", split = "test";
};

void run_evaluate(const EvaluateArgs& a) {
    const ExperimentConfig cfg = load_experiment_config(a.config);
    const PipelineData data = load_pipeline_data(cfg);
    const Dataset& ds = a.split == "val"     ? data.val
                        : a.split == "train" ? data.train
                        : a.split == "test"
                            ? data.test
                            : throw ConfigError("unknown split \"" + a.split + "\"");

    const std::filesystem::path dir(a.experiment);
    const std::string stage = canonical_stage(a.stage);
    auto blob = [&](const std::string& st, const std::string& mod) {
        return load_checkpoint(dir / (st + "_" + mod + ".ckpt")).blob;
    };

    EvalReport report;
    if (stage == "stage1") {
        Stage1Model m = Stage1Model::from_blob(blob("stage1", a.modality));
        report = evaluate(stage1_scorer(m, &data.store), ds);
    } else if (stage == "stage2") {
        Stage1Model m1 = Stage1Model::from_blob(blob("stage1", a.modality));
        Stage2Model m2 = Stage2Model::from_blob(blob("stage2", a.modality));
        report = evaluate(stage2_scorer(m1, m2, &data.store), ds);
    } else if (stage == "stage3") {
        Stage1Model text1 = Stage1Model::from_blob(blob("stage1", "text"));
        Stage1Model speech1 = Stage1Model::from_blob(blob("stage1", "speech"));
        Stage2Model text2 = Stage2Model::from_blob(blob("stage2", "text"));
        Stage2Model speech2 = Stage2Model::from_blob(blob("stage2", "speech"));
        Stage3Model fused = Stage3Model::from_blob(blob("stage3", "fused"));
        FrozenPathway path{&text1, &speech1, &text2, &speech2, &data.store};
        report = evaluate(stage3_scorer(path, fused), ds);
    } else {
        throw ConfigError("evaluate supports stage1, stage2 and stage3");
    }
    report.split = a.split;
    report.stage = stage;
    const auto file = dir / ("eval_" + stage + "_" + a.split + ".json");
    write_text(file, report.to_json());
    std::cout << stage << " " << a.split << " weighted F1 " << report.weighted_f1
              << " -> " << file.string() << "\n";
}

struct AblateArgs {
    std::string config, study = "merged", out, seeds;
    double target = 0.9;
};

void run_ablate(const AblateArgs& a) {
    const ExperimentConfig cfg = load_experiment_config(a.config);
    const PipelineData data = load_pipeline_data(cfg);
    std::filesystem::create_directories(a.out);
    const std::filesystem::path dir(a.out);

    if (a.study == "merged" || a.study == "fusion") {
        AblationReport report;
        if (a.study == "merged") {
            const std::vector<std::uint64_t> seeds =
                a.seeds.empty() ? std::vector<std::uint64_t>{1, 2, 3, 4, 5}
                                : parse_seed_list(a.seeds);
            report = run_merged_ablation(data, cfg.train, seeds, cfg.fusion);
        } else {
            report = run_fusion_ablation(data, cfg.train);
        }
        write_text(dir / ("ablation_" + a.study + ".json"), report.to_json());
        write_text(dir / ("ablation_" + a.study + ".csv"), report.to_csv());
        std::cout << report.to_table();
        return;
    }
    if (a.study == "pretrain") {
        if (cfg.pretrain_corpus.empty())
            throw ConfigError("the pretrain study needs [pretrain] corpus in the config");
        const std::vector<std::uint64_t> seeds =
            a.seeds.empty() ? std::vector<std::uint64_t>{1, 2, 3} : parse_seed_list(a.seeds);
        const PseudoLabeledCorpus corpus = load_pseudo_corpus(cfg.pretrain_corpus);
        const PretrainStudy study =
            run_pretrain_study(corpus, data, cfg.pretrain, cfg.train, a.target, seeds);
        write_text(dir / "ablation_pretrain.json", study.to_json());
        write_text(dir / "ablation_pretrain.csv", study.to_csv());
        std::cout << study.to_csv();
        return;
    }
    throw ConfigError("unknown study \"" + a.study + "\" (merged, fusion, pretrain)");
}

struct ReportArgs {
    std::string experiment, format = "table";
};

void run_report(const ReportArgs& a) {
    const auto file = std::filesystem::path(a.experiment) / "report.json";
    std::ifstream in(file);
    if (!in) throw DependencyError("no report.json under " + a.experiment + "; run train first");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
    ExperimentReport report;
    for (const auto& row : j.at("rows")) {
        StageRow r;
        r.stage = row.at("stage").get<std::string>();
        r.modality = row.at("modality").get<std::string>();
        r.val_f1 = row.at("val_f1").get<double>();
        r.test_f1 = row.at("test_f1").get<double>();
        r.best_epoch = row.at("best_epoch").get<int>();
        r.epochs = row.at("epochs").get<int>();
        report.rows.push_back(std::move(r));
    }
    if (a.format == "table") std::cout << report.to_table();
    else if (a.format == "csv") std::cout << report.to_csv();
    else if (a.format == "json") std::cout << report.to_json();
    else throw ConfigError("unknown format \"" + a.format + "\" (table, csv, json)");
}

void add_train_config_flags(CLI::App* cmd, TrainConfig& cfg) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs");
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate");
    cmd->add_option("--batch", cfg.batch_size, "Minibatch size (conversations or rows)");
    cmd->add_option("--seed", cfg.seed, "Random seed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staged speech-text emotion recognition pipeline"};
    app.require_subcommand(1);

    PrepareArgs prepare;
    CLI::App* p = app.add_subcommand("prepare", "Generate seeded synthetic fixtures");
    p->add_option("--synthetic", prepare.task, "Task family")
        ->required()
        ->check(CLI::IsMember({"separable", "context", "xor", "composite", "keyword"}));
    p->add_option("--out", prepare.out, "Output directory")->required();
    p->add_option("--seed", prepare.seed, "Generator seed");
    p->add_option("--train-conversations", prepare.train_conversations, "Train split size");
    p->add_option("--val-conversations", prepare.val_conversations, "Val split size");
    p->add_option("--test-conversations", prepare.test_conversations, "Test split size");
    p->callback([&] { run_prepare(prepare); });

    AnnotateArgs annotate_args;
    CLI::App* an = app.add_subcommand("annotate", "Pseudo-label transcripts with an LLM");
    an->add_option("--in", annotate_args.in, "Transcript JSONL (id, text)")->required();
    an->add_option("--backend", annotate_args.backend,
                   "Backend: mock, gpt35, llama3, mixtral");
    an->add_option("--cache", annotate_args.cache, "Response cache JSONL")->required();
    an->add_option("--out", annotate_args.out, "Output directory")->required();
    an->add_option("--retries", annotate_args.retries, "Extra attempts per transcript");
    an->add_option("--concurrency", annotate_args.concurrency, "In-flight requests");
    an->callback([&] { run_annotate(annotate_args); });

    PretrainArgs pretrain_args;
    CLI::App* pt = app.add_subcommand("pretrain", "Pre-train the text encoder on pseudo-labels");
    pt->add_option("--corpus", pretrain_args.corpus, "Pseudo-labeled corpus JSONL")->required();
    pt->add_option("--out", pretrain_args.out, "Output directory")->required();
    add_train_config_flags(pt, pretrain_args.cfg);
    pt->callback([&] { run_pretrain(pretrain_args); });

    TrainArgs train_args;
    CLI::App* tr = app.add_subcommand("train", "Run the staged pipeline");
    tr->add_option("--config", train_args.config, "Experiment INI file")->required();
    tr->add_option("--out", train_args.out, "Experiment directory")->required();
    tr->add_option("--stage", train_args.stage, "Run one stage only (1, 2, 3, pretrain)");
    tr->add_option("--seed", train_args.seed, "Override the config seed");
    tr->callback([&] { run_train(train_args); });

    EvaluateArgs eval_args;
    CLI::App* ev = app.add_subcommand("evaluate", "Score a trained stage on one split");
    ev->add_option("--config", eval_args.config, "Experiment INI file")->required();
    ev->add_option("--experiment", eval_args.experiment, "Checkpoint directory")->required();
    ev->add_option("--stage", eval_args.stage, "stage1, stage2 or stage3");
    ev->add_option("--modality", eval_args.modality, "speech, text or fused");
    ev->add_option("--split", eval_args.split, "train, val or test");
    ev->callback([&] { run_evaluate(eval_args); });

    AblateArgs ablate_args;
    CLI::App* ab = app.add_subcommand("ablate", "Run an ablation study");
    ab->add_option("--config", ablate_args.config, "Experiment INI file")->required();
    ab->add_option("--study", ablate_args.study, "merged, fusion or pretrain");
    ab->add_option("--out", ablate_args.out, "Output directory")->required();
    ab->add_option("--seeds", ablate_args.seeds, "Comma-separated seed list");
    ab->add_option("--target", ablate_args.target, "Target F1 for the pretrain study");
    ab->callback([&] { run_ablate(ablate_args); });

    ReportArgs report_args;
    CLI::App* rp = app.add_subcommand("report", "Re-emit a saved experiment report");
    rp->add_option("--experiment", report_args.experiment, "Experiment directory")->required();
    rp->add_option("--format", report_args.format, "table, csv or json");
    rp->callback([&] { run_report(report_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const merits::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const merits::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
