#pragma once

#include <algorithm>
#include <numeric>
#include <random>

#include "merits/nn.hpp"
#include "merits/train_config.hpp"

namespace merits {

// Shared epoch driver: shuffles item indices, runs minibatches, clips and
// steps AdamW, tracks validation weighted F1 and restores the best epoch's
// parameters when done. Ties keep the earliest epoch. `batch_loss` must
// build one graph over the given items, run backward, and return the loss
// value (already normalized by the batch item count).
template <typename BatchFn, typename EvalFn>
TrainHistory run_training(std::size_t n_items, const TrainConfig& cfg,
                          const std::vector<Parameter*>& params, BatchFn&& batch_loss,
                          EvalFn&& val_f1_fn) {
    TrainHistory history;
    if (cfg.epochs <= 0 || n_items == 0) return history;

    nn::AdamW opt;
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), 0);

    std::vector<Matrix> best;
    const std::size_t bs = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size)
                                              : n_items;
    int stale = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t at = 0; at < n_items; at += bs) {
            const std::size_t end = std::min(n_items, at + bs);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            nn::zero_grads(params);
            const double loss = batch_loss(batch);
            nn::clip_grad_norm(params, cfg.grad_clip);
            opt.step(params);
            loss_sum += loss * static_cast<double>(batch.size());
        }
        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(n_items);
        stats.val_f1 = val_f1_fn();
        history.epochs.push_back(stats);

        if (history.best_epoch < 0 || stats.val_f1 > history.best_val_f1) {
            history.best_epoch = epoch;
            history.best_val_f1 = stats.val_f1;
            best = nn::snapshot_values(params);
            stale = 0;
        } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
            break;
        }
    }
    if (history.best_epoch >= 0) nn::restore_values(params, best);
    return history;
}

}  // namespace merits
