#pragma once

#include <cstdint>
#include <vector>

namespace merits {

struct TrainConfig {
    int epochs = 50;
    double learning_rate = 1e-4;
    int batch_size = 32;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // global norm ceiling; <= 0 disables clipping
    int patience = 0;        // epochs without val improvement before stopping; 0 = off
    std::uint64_t seed = 0;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_f1 = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;  // 0-based; -1 when no epoch ran
    double best_val_f1 = 0.0;

    // First 1-based epoch whose val F1 reaches `target`, or 0 when none does.
    int epochs_to_reach(double target) const {
        for (std::size_t i = 0; i < epochs.size(); ++i)
            if (epochs[i].val_f1 >= target) return static_cast<int>(i) + 1;
        return 0;
    }
};

std::uint64_t config_fingerprint(const TrainConfig& c);

}  // namespace merits
