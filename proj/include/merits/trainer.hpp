#pragma once

#include <filesystem>

#include "merits/fusion.hpp"

namespace merits {

// Experiment description, one INI file. Unknown sections or keys are
// configuration errors so typos never silently fall back to defaults.
struct ExperimentConfig {
    // [data]
    std::filesystem::path train_file;
    std::filesystem::path val_file;
    std::filesystem::path test_file;
    std::filesystem::path features_file;
    std::string label_space = "iemocap4";

    // [pretrain]; corpus empty means the pretrain stage is unavailable
    std::filesystem::path pretrain_corpus;
    TrainConfig pretrain = [] {
        TrainConfig c;
        c.epochs = 10;
        return c;
    }();

    // [train]
    TrainConfig train;

    // [pipeline]
    std::vector<std::string> stages = {"stage1", "stage2", "stage3"};
    FusionKind fusion = FusionKind::coattention;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& file);

struct PipelineData {
    Dataset train, val, test;
    FeatureStore store;
};

PipelineData load_pipeline_data(const ExperimentConfig& cfg);

struct StageRow {
    std::string stage;     // stage1 | stage2 | stage3
    std::string modality;  // speech | text | fused
    double val_f1 = 0.0;
    double test_f1 = 0.0;
    int best_epoch = 0;  // 1-based; 0 when no epoch ran
    int epochs = 0;
};

struct ExperimentReport {
    std::vector<StageRow> rows;

    std::string to_json() const;
    std::string to_table() const;
    std::string to_csv() const;
};

// Runs the requested stages in order, training each on the frozen
// checkpoints of the stages before it. Checkpoints land in
// out_dir/{stage}_{modality}.ckpt; the report covers the stages that ran in
// this call. Earlier-stage checkpoints are re-verified after every training
// stage and any drift is an integrity error.
ExperimentReport run_pipeline(const ExperimentConfig& cfg,
                              const std::filesystem::path& out_dir);

struct MergedTrainResult {
    Stage2Model speech2, text2;
    Stage3Model fused;
    TrainHistory history;
};

// Ablation arm: both conversation models and the fusion model train jointly
// end-to-end from frozen Stage I, same structures and parameter count as the
// staged pipeline.
MergedTrainResult merged_stage_train(Stage1Model& text1, Stage1Model& speech1,
                                     const Dataset& train, const Dataset& val,
                                     const FeatureStore* store, const TrainConfig& cfg,
                                     FusionKind kind = FusionKind::coattention);

struct Stage1Pair {
    Stage1Model text;
    Stage1Model speech;
};

Stage1Pair train_stage1_pair(const PipelineData& data, const TrainConfig& cfg);

struct ArmResult {
    double val_f1 = 0.0;
    double test_f1 = 0.0;
};

// Stage II then Stage III on frozen Stage I (the staged arm) versus joint
// training of the same parameters (the merged arm).
ArmResult hierarchical_arm(Stage1Pair& s1, const PipelineData& data,
                           const TrainConfig& cfg, FusionKind kind);
ArmResult merged_arm(Stage1Pair& s1, const PipelineData& data, const TrainConfig& cfg,
                     FusionKind kind);

struct AblationRow {
    std::string arm;
    std::uint64_t seed = 0;
    double val_f1 = 0.0;
    double test_f1 = 0.0;
};

struct AblationReport {
    std::string study;  // merged | fusion | pretrain
    std::vector<AblationRow> rows;

    std::string to_json() const;
    std::string to_csv() const;
    std::string to_table() const;
};

// Staged versus merged training across seeds on one dataset.
AblationReport run_merged_ablation(const PipelineData& data, const TrainConfig& base,
                                   const std::vector<std::uint64_t>& seeds,
                                   FusionKind kind);

// Co-attention versus plain concatenation over one shared frozen trunk.
AblationReport run_fusion_ablation(const PipelineData& data, const TrainConfig& cfg);

struct PretrainStudyRow {
    std::string arm;  // pretrained | random
    std::uint64_t seed = 0;
    int epochs_to_target = 0;  // 1-based; 0 when the target was never reached
    double best_val_f1 = 0.0;
};

struct PretrainStudy {
    double target_f1 = 0.0;
    std::vector<PretrainStudyRow> rows;

    std::string to_json() const;
    std::string to_csv() const;
};

// Pseudo-label pre-training benefit: epochs until the text pathway reaches
// target_f1 with and without the pre-trained trunk, per seed.
PretrainStudy run_pretrain_study(const PseudoLabeledCorpus& corpus,
                                 const PipelineData& data,
                                 const TrainConfig& pretrain_cfg,
                                 const TrainConfig& downstream_cfg, double target_f1,
                                 const std::vector<std::uint64_t>& seeds);

}  // namespace merits
