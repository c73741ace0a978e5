#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fvqa {

enum class FusionMethod { Concat, Add, Mul };

std::string_view to_string(FusionMethod method); // "cat" | "add" | "mul"
FusionMethod fusion_method_from_string(std::string_view name);

struct FusionConfig {
    FusionMethod method = FusionMethod::Concat;
    int image_dim = 0;
    int text_dim = 0;
    int common_dim = 512; // projection width for Add/Mul
    std::array<int, 2> hidden_dims{512, 256};
    int num_classes = 56;
    std::uint64_t seed = 0;

    /// Width of the fused vector entering the first of the three layers.
    int fused_dim() const {
        return method == FusionMethod::Concat ? image_dim + text_dim : common_dim;
    }

    void validate() const {
        if (image_dim <= 0 || text_dim <= 0) {
            throw std::invalid_argument("fusion config: modality dims must be positive");
        }
        if (method != FusionMethod::Concat && common_dim <= 0) {
            throw std::invalid_argument("fusion config: common_dim must be positive");
        }
        if (hidden_dims[0] <= 0 || hidden_dims[1] <= 0) {
            throw std::invalid_argument("fusion config: hidden dims must be positive");
        }
        if (num_classes != 56) {
            throw std::invalid_argument("fusion config: the answer space has exactly 56 classes");
        }
    }
};

template <typename Scalar>
struct LinearT {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> weight; // out x in
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> bias;                // out
};

/// Trainable parameter set. proj_* are empty for Concat.
template <typename Scalar>
struct FusionParamsT {
    LinearT<Scalar> proj_image;
    LinearT<Scalar> proj_text;
    LinearT<Scalar> fc1;
    LinearT<Scalar> fc2;
    LinearT<Scalar> fc3;
};

/// Visits every trainable array in a fixed order (names are the checkpoint
/// keys). f(name, eigen_array&).
template <typename Params, typename F>
void for_each_param(Params&& params, FusionMethod method, F&& f) {
    if (method != FusionMethod::Concat) {
        f("proj_image.weight", params.proj_image.weight);
        f("proj_image.bias", params.proj_image.bias);
        f("proj_text.weight", params.proj_text.weight);
        f("proj_text.bias", params.proj_text.bias);
    }
    f("fc1.weight", params.fc1.weight);
    f("fc1.bias", params.fc1.bias);
    f("fc2.weight", params.fc2.weight);
    f("fc2.bias", params.fc2.bias);
    f("fc3.weight", params.fc3.weight);
    f("fc3.bias", params.fc3.bias);
}

/// Fusion head: combines one image vector and one text vector into 56 class
/// logits. Concat feeds [image ∥ text] straight into three linear layers;
/// Add/Mul first project both modalities to common_dim and combine them
/// elementwise. ReLU between the layers, none after the last.
///
/// Scalar is float for training/inference and double for the finite-
/// difference gradient checks. Samples are matrix columns throughout.
template <typename Scalar>
class FusionModelT {
public:
    using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    explicit FusionModelT(FusionConfig config) : config_(config) {
        config_.validate();
        const int fused = config_.fused_dim();
        if (config_.method != FusionMethod::Concat) {
            params_.proj_image.weight.resize(config_.common_dim, config_.image_dim);
            params_.proj_image.bias.resize(config_.common_dim);
            params_.proj_text.weight.resize(config_.common_dim, config_.text_dim);
            params_.proj_text.bias.resize(config_.common_dim);
        }
        params_.fc1.weight.resize(config_.hidden_dims[0], fused);
        params_.fc1.bias.resize(config_.hidden_dims[0]);
        params_.fc2.weight.resize(config_.hidden_dims[1], config_.hidden_dims[0]);
        params_.fc2.bias.resize(config_.hidden_dims[1]);
        params_.fc3.weight.resize(config_.num_classes, config_.hidden_dims[1]);
        params_.fc3.bias.resize(config_.num_classes);
        init_params();
    }

    const FusionConfig& config() const { return config_; }
    FusionParamsT<Scalar>& params() { return params_; }
    const FusionParamsT<Scalar>& params() const { return params_; }

    /// Everything backward() needs from the forward pass.
    struct Cache {
        Mat proj_image, proj_text; // populated for Add/Mul
        Mat fused;
        Mat pre1, act1, pre2, act2;
    };

    /// image_feats: image_dim x B, text_feats: text_dim x B -> 56 x B.
    Mat forward_batch(const Mat& image_feats, const Mat& text_feats,
                      Cache* cache = nullptr) const {
        if (image_feats.rows() != config_.image_dim) {
            throw std::invalid_argument("image features have width " +
                                        std::to_string(image_feats.rows()) +
                                        ", model expects image_dim " +
                                        std::to_string(config_.image_dim));
        }
        if (text_feats.rows() != config_.text_dim) {
            throw std::invalid_argument("text features have width " +
                                        std::to_string(text_feats.rows()) +
                                        ", model expects text_dim " +
                                        std::to_string(config_.text_dim));
        }
        if (image_feats.cols() != text_feats.cols()) {
            throw std::invalid_argument("image/text batch sizes differ");
        }

        Mat fused;
        Mat proj_image, proj_text;
        switch (config_.method) {
        case FusionMethod::Concat:
            fused.resize(config_.image_dim + config_.text_dim, image_feats.cols());
            fused.topRows(config_.image_dim) = image_feats;
            fused.bottomRows(config_.text_dim) = text_feats;
            break;
        case FusionMethod::Add:
        case FusionMethod::Mul:
            proj_image = (params_.proj_image.weight * image_feats).colwise() +
                         params_.proj_image.bias;
            proj_text = (params_.proj_text.weight * text_feats).colwise() +
                        params_.proj_text.bias;
            fused = config_.method == FusionMethod::Add
                        ? Mat(proj_image + proj_text)
                        : Mat(proj_image.cwiseProduct(proj_text));
            break;
        }

        Mat pre1 = (params_.fc1.weight * fused).colwise() + params_.fc1.bias;
        Mat act1 = pre1.cwiseMax(Scalar(0));
        Mat pre2 = (params_.fc2.weight * act1).colwise() + params_.fc2.bias;
        Mat act2 = pre2.cwiseMax(Scalar(0));
        Mat logits = (params_.fc3.weight * act2).colwise() + params_.fc3.bias;

        if (cache != nullptr) {
            cache->proj_image = std::move(proj_image);
            cache->proj_text = std::move(proj_text);
            cache->fused = std::move(fused);
            cache->pre1 = std::move(pre1);
            cache->act1 = std::move(act1);
            cache->pre2 = std::move(pre2);
            cache->act2 = std::move(act2);
        }
        return logits;
    }

    Vec forward(const Vec& image_vec, const Vec& text_vec) const {
        return forward_batch(image_vec, text_vec);
    }

    /// Parameter gradients for the given upstream dlogits (56 x B). Whatever
    /// normalization the loss uses is already folded into dlogits.
    FusionParamsT<Scalar> backward(const Mat& image_feats, const Mat& text_feats,
                                   const Cache& cache, const Mat& dlogits) const {
        FusionParamsT<Scalar> g;

        g.fc3.weight = dlogits * cache.act2.transpose();
        g.fc3.bias = dlogits.rowwise().sum();

        Mat d2 = params_.fc3.weight.transpose() * dlogits;
        d2 = d2.cwiseProduct(relu_mask(cache.pre2));
        g.fc2.weight = d2 * cache.act1.transpose();
        g.fc2.bias = d2.rowwise().sum();

        Mat d1 = params_.fc2.weight.transpose() * d2;
        d1 = d1.cwiseProduct(relu_mask(cache.pre1));
        g.fc1.weight = d1 * cache.fused.transpose();
        g.fc1.bias = d1.rowwise().sum();

        if (config_.method != FusionMethod::Concat) {
            Mat dfused = params_.fc1.weight.transpose() * d1;
            Mat dproj_image, dproj_text;
            if (config_.method == FusionMethod::Add) {
                dproj_image = dfused;
                dproj_text = std::move(dfused);
            } else {
                dproj_image = dfused.cwiseProduct(cache.proj_text);
                dproj_text = dfused.cwiseProduct(cache.proj_image);
            }
            g.proj_image.weight = dproj_image * image_feats.transpose();
            g.proj_image.bias = dproj_image.rowwise().sum();
            g.proj_text.weight = dproj_text * text_feats.transpose();
            g.proj_text.bias = dproj_text.rowwise().sum();
        }
        return g;
    }

private:
    static Mat relu_mask(const Mat& pre) {
        return (pre.array() > Scalar(0)).template cast<Scalar>().matrix();
    }

    // Fan-in-scaled uniform init from a fully pinned-down generator: the
    // mt19937_64 stream and the 53-bit mapping below are identical on every
    // platform, so a (config, seed) pair always yields the same parameters.
    void init_params() {
        std::mt19937_64 gen(config_.seed);
        auto next_unit = [&gen] {
            return static_cast<double>(gen() >> 11) * 0x1.0p-53;
        };
        auto init_linear = [&](LinearT<Scalar>& linear) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(linear.weight.cols()));
            for (Eigen::Index r = 0; r < linear.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < linear.weight.cols(); ++c) {
                    linear.weight(r, c) = static_cast<Scalar>((2.0 * next_unit() - 1.0) * bound);
                }
            }
            for (Eigen::Index r = 0; r < linear.bias.rows(); ++r) {
                linear.bias(r) = static_cast<Scalar>((2.0 * next_unit() - 1.0) * bound);
            }
        };
        if (config_.method != FusionMethod::Concat) {
            init_linear(params_.proj_image);
            init_linear(params_.proj_text);
        }
        init_linear(params_.fc1);
        init_linear(params_.fc2);
        init_linear(params_.fc3);
    }

    FusionConfig config_;
    FusionParamsT<Scalar> params_;
};

using FusionModel = FusionModelT<float>;

/// Argmax class decoding; ties break toward the lowest index. Throws
/// std::invalid_argument if any logit is NaN.
template <typename Scalar>
int predict(std::span<const Scalar> logits) {
    if (logits.empty()) throw std::invalid_argument("predict: empty logits");
    int best = 0;
    for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
        const Scalar v = logits[static_cast<std::size_t>(i)];
        if (std::isnan(v)) throw std::invalid_argument("predict: NaN logit");
        if (v > logits[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

inline int predict(const Eigen::VectorXf& logits) {
    return predict(std::span<const float>(logits.data(), static_cast<std::size_t>(logits.size())));
}

struct Checkpoint {
    FusionModel model;
    std::string model_tag;
};

/// Self-describing checkpoint: magic + format version + JSON directory
/// (config, named parameter shapes/offsets) + row-major little-endian
/// float32 payload. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const FusionModel& model,
                     const std::string& model_tag);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace fvqa
