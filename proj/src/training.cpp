#include "fvqa/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "fvqa/common.hpp"
#include "fvqa/rng.hpp"

namespace fvqa {

namespace {

template <typename Scalar>
double cross_entropy_impl(std::span<const Scalar> logits, int target) {
    if (target < 0 || target >= static_cast<int>(logits.size())) {
        throw std::out_of_range("cross_entropy: target " + std::to_string(target) +
                                " is outside 0.." + std::to_string(logits.size() - 1));
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (Scalar v : logits) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw std::invalid_argument("cross_entropy: non-finite logit");
        }
        max_logit = std::max(max_logit, static_cast<double>(v));
    }
    double sum = 0.0;
    for (Scalar v : logits) sum += std::exp(static_cast<double>(v) - max_logit);
    return std::log(sum) - (static_cast<double>(logits[static_cast<std::size_t>(target)]) -
                            max_logit);
}

/// Flat views over a parameter set, in visitation order.
std::vector<Eigen::Map<Eigen::VectorXf>> flat_params(FusionParamsT<float>& params,
                                                     FusionMethod method) {
    std::vector<Eigen::Map<Eigen::VectorXf>> views;
    for_each_param(params, method, [&](const char*, auto& array) {
        views.emplace_back(array.data(), array.size());
    });
    return views;
}

class Adam {
public:
    Adam(const AdamConfig& config, double learning_rate)
        : config_(config), lr_(learning_rate) {}

    void step(FusionModel& model, FusionParamsT<float>& grads) {
        auto params = flat_params(model.params(), model.config().method);
        auto grad_views = flat_params(grads, model.config().method);
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(Eigen::VectorXf::Zero(p.size()));
                v_.emplace_back(Eigen::VectorXf::Zero(p.size()));
            }
        }
        ++t_;
        const float c1 = static_cast<float>(1.0 - std::pow(config_.beta1, t_));
        const float c2 = static_cast<float>(1.0 - std::pow(config_.beta2, t_));
        const float b1 = static_cast<float>(config_.beta1);
        const float b2 = static_cast<float>(config_.beta2);
        const float lr = static_cast<float>(lr_);
        const float eps = static_cast<float>(config_.epsilon);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& m = m_[i];
            auto& v = v_[i];
            const auto g = grad_views[i].array();
            m.array() = b1 * m.array() + (1.0f - b1) * g;
            v.array() = b2 * v.array() + (1.0f - b2) * g.square();
            params[i].array() -=
                lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        }
    }

private:
    AdamConfig config_;
    double lr_;
    long t_ = 0;
    std::vector<Eigen::VectorXf> m_, v_;
};

} // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be positive");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
}

nlohmann::json TrainConfig::to_json() const {
    return {
        {"optimizer", "adam"},
        {"loss", "cross_entropy"},
        {"learning_rate", learning_rate},
        {"batch_size", batch_size},
        {"epochs", epochs},
        {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}}},
        {"seed", seed},
        {"shuffle", shuffle},
    };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig config;
    if (j.contains("learning_rate")) config.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("batch_size")) config.batch_size = j.at("batch_size").get<int>();
    if (j.contains("epochs")) config.epochs = j.at("epochs").get<int>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("shuffle")) config.shuffle = j.at("shuffle").get<bool>();
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        if (a.contains("beta1")) config.adam.beta1 = a.at("beta1").get<double>();
        if (a.contains("beta2")) config.adam.beta2 = a.at("beta2").get<double>();
        if (a.contains("epsilon")) config.adam.epsilon = a.at("epsilon").get<double>();
    }
    return config;
}

nlohmann::json TrainLog::to_json() const {
    auto epoch_list = nlohmann::json::array();
    for (const EpochStats& e : epochs) {
        epoch_list.push_back({{"mean_loss", e.mean_loss},
                              {"accuracy", e.accuracy},
                              {"elapsed_seconds", e.elapsed_seconds}});
    }
    return {
        {"pipeline_version", pipeline_version},
        {"config", config.to_json()},
        {"stores",
         {{"image_digest", image_store_digest}, {"text_digest", text_store_digest}}},
        {"epochs", epoch_list},
        {"total_seconds", total_seconds},
        {"optimizer_steps", optimizer_steps},
    };
}

double cross_entropy(std::span<const float> logits, int target) {
    return cross_entropy_impl(logits, target);
}

double cross_entropy(std::span<const double> logits, int target) {
    return cross_entropy_impl(logits, target);
}

BatchLoss softmax_cross_entropy_batch(const Eigen::MatrixXf& logits,
                                      std::span<const int> targets) {
    if (static_cast<std::size_t>(logits.cols()) != targets.size()) {
        throw std::invalid_argument("softmax_cross_entropy_batch: target count mismatch");
    }
    BatchLoss result;
    result.dlogits.resize(logits.rows(), logits.cols());
    const auto batch = static_cast<float>(logits.cols());
    double loss_sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        Eigen::Index argmax = 0;
        const float max_logit = logits.col(j).maxCoeff(&argmax);
        const Eigen::ArrayXf shifted = logits.col(j).array() - max_logit;
        const Eigen::ArrayXf exps = shifted.exp();
        const float denom = exps.sum();
        const int target = targets[static_cast<std::size_t>(j)];
        if (target < 0 || target >= logits.rows()) {
            throw std::out_of_range("softmax_cross_entropy_batch: target out of range");
        }
        loss_sum += std::log(static_cast<double>(denom)) -
                    static_cast<double>(shifted(target));
        result.dlogits.col(j) = (exps / denom).matrix() / batch;
        result.dlogits(target, j) -= 1.0f / batch;
        if (argmax == target) ++result.correct;
    }
    result.mean_loss = loss_sum / static_cast<double>(logits.cols());
    return result;
}

TrainLog train(FusionModel& model, const std::vector<QAPair>& train_pairs,
               const FeatureStore& image_store, const FeatureStore& text_store,
               const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const auto& model_config = model.config();
    if (image_store.output_dim() != model_config.image_dim) {
        throw std::invalid_argument("image store width " +
                                    std::to_string(image_store.output_dim()) +
                                    " does not match model image_dim " +
                                    std::to_string(model_config.image_dim));
    }
    if (text_store.output_dim() != model_config.text_dim) {
        throw std::invalid_argument("text store width " +
                                    std::to_string(text_store.output_dim()) +
                                    " does not match model text_dim " +
                                    std::to_string(model_config.text_dim));
    }
    if (train_pairs.empty()) throw std::invalid_argument("train: no training pairs");

    // Preflight every lookup so a missing feature fails before any step.
    const LabelVocabulary vocab;
    std::vector<int> targets;
    targets.reserve(train_pairs.size());
    for (const QAPair& pair : train_pairs) {
        if (!image_store.contains(pair.image_id)) {
            throw std::runtime_error("missing image feature for '" + pair.image_id +
                                     "' in store " + image_store.dir().string());
        }
        if (!text_store.contains(pair.question_id)) {
            throw std::runtime_error("missing text feature for '" + pair.question_id +
                                     "' in store " + text_store.dir().string());
        }
        targets.push_back(vocab.index_of(pair.answer));
    }

    TrainLog log;
    log.config = config;
    log.image_store_digest = image_store.payload_digest();
    log.text_store_digest = text_store.payload_digest();
    log.pipeline_version = std::string(kPipelineVersion);

    const auto n = train_pairs.size();
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    Adam optimizer(config.adam, config.learning_rate);
    Eigen::MatrixXf image_batch(model_config.image_dim, static_cast<Eigen::Index>(batch_size));
    Eigen::MatrixXf text_batch(model_config.text_dim, static_cast<Eigen::Index>(batch_size));
    std::vector<int> batch_targets(batch_size);

    const auto start = std::chrono::steady_clock::now();
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) {
            DetRng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
            rng.shuffle(order);
        }

        double epoch_loss_sum = 0.0;
        std::int64_t epoch_correct = 0;
        for (std::size_t begin = 0; begin < n; begin += batch_size) {
            const std::size_t count = std::min(batch_size, n - begin);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t idx = order[begin + i];
                const auto img = image_store.vector_for(train_pairs[idx].image_id);
                const auto txt = text_store.vector_for(train_pairs[idx].question_id);
                image_batch.col(static_cast<Eigen::Index>(i)) =
                    Eigen::Map<const Eigen::VectorXf>(img.data(),
                                                      static_cast<Eigen::Index>(img.size()));
                text_batch.col(static_cast<Eigen::Index>(i)) =
                    Eigen::Map<const Eigen::VectorXf>(txt.data(),
                                                      static_cast<Eigen::Index>(txt.size()));
                batch_targets[i] = targets[idx];
            }
            const auto cols = static_cast<Eigen::Index>(count);
            FusionModel::Cache cache;
            Eigen::MatrixXf logits =
                model.forward_batch(image_batch.leftCols(cols), text_batch.leftCols(cols),
                                    &cache);
            BatchLoss loss = softmax_cross_entropy_batch(
                logits, std::span<const int>(batch_targets.data(), count));
            if (!std::isfinite(loss.mean_loss)) {
                throw std::runtime_error("non-finite training loss at epoch " +
                                         std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(begin / batch_size + 1));
            }
            FusionParamsT<float> grads = model.backward(image_batch.leftCols(cols),
                                                        text_batch.leftCols(cols), cache,
                                                        loss.dlogits);
            optimizer.step(model, grads);
            ++log.optimizer_steps;
            epoch_loss_sum += loss.mean_loss * static_cast<double>(count);
            epoch_correct += loss.correct;
        }

        EpochStats stats;
        stats.mean_loss = epoch_loss_sum / static_cast<double>(n);
        stats.accuracy = static_cast<double>(epoch_correct) / static_cast<double>(n);
        stats.elapsed_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log.epochs.push_back(stats);
        if (on_epoch) on_epoch(epoch, stats);
    }
    log.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return log;
}

} // namespace fvqa
