#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvqa/dataset.hpp"
#include "fvqa/feature_store.hpp"
#include "fvqa/fusion.hpp"

namespace fvqa {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct TrainConfig {
    double learning_rate = 3e-4;
    int batch_size = 128;
    int epochs = 100;
    AdamConfig adam; // the only supported optimizer; loss is cross-entropy
    std::uint64_t seed = 0;
    bool shuffle = true;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
    double mean_loss = 0.0;
    double accuracy = 0.0;        // fraction in [0,1]
    double elapsed_seconds = 0.0; // cumulative since training start
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    double total_seconds = 0.0;
    std::int64_t optimizer_steps = 0;
    TrainConfig config;
    std::string image_store_digest;
    std::string text_store_digest;
    std::string pipeline_version;

    nlohmann::json to_json() const;
};

/// -log softmax(logits)[target], computed in double with max-subtraction.
/// Throws on non-finite logits or an out-of-range target.
double cross_entropy(std::span<const float> logits, int target);
double cross_entropy(std::span<const double> logits, int target);

/// Mean softmax cross-entropy over a batch of logit columns, plus the
/// gradient w.r.t. the logits (already divided by the batch size) and the
/// number of argmax hits.
struct BatchLoss {
    double mean_loss = 0.0;
    Eigen::MatrixXf dlogits;
    std::int64_t correct = 0;
};
BatchLoss softmax_cross_entropy_batch(const Eigen::MatrixXf& logits,
                                      std::span<const int> targets);

using EpochCallback = std::function<void(int epoch_index, const EpochStats& stats)>;

/// Mini-batch Adam over shuffled batches for config.epochs. Only the model's
/// parameters change; the stores are read-only. Fails before the first step
/// if any pair lacks a cached feature or the widths disagree, and aborts
/// with epoch/batch context if the loss ever goes non-finite. Deterministic
/// for fixed seeds.
TrainLog train(FusionModel& model, const std::vector<QAPair>& train_pairs,
               const FeatureStore& image_store, const FeatureStore& text_store,
               const TrainConfig& config, const EpochCallback& on_epoch = {});

} // namespace fvqa
