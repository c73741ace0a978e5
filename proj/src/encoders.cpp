#include "fvqa/encoders.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <future>
#include <thread>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fvqa/common.hpp"
#include "fvqa/rng.hpp"
#include "fvqa/sha256.hpp"

namespace fvqa {

namespace {

constexpr double kUnit53 = 0x1.0p-53;

// Fixed pseudo-random embedding row for one token hash. Uniform components
// with variance 1/dim, so a row has unit norm in expectation.
void accumulate_embedding_row(std::uint64_t token_hash, std::uint64_t weight_seed, int dim,
                              std::vector<double>& acc) {
    std::uint64_t state = token_hash ^ weight_seed;
    const double bound = std::sqrt(3.0 / static_cast<double>(dim));
    for (int j = 0; j < dim; ++j) {
        const double u = static_cast<double>(splitmix64(state) >> 11) * kUnit53;
        acc[static_cast<std::size_t>(j)] += (2.0 * u - 1.0) * bound;
    }
}

std::vector<std::string> tokenize_lower_alnum(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c) != 0) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

void check_output(const std::vector<float>& v, const EncoderSpec& spec) {
    if (static_cast<int>(v.size()) != spec.output_dim) {
        throw std::runtime_error("encoder '" + spec.name + "' produced width " +
                                 std::to_string(v.size()) + ", expected " +
                                 std::to_string(spec.output_dim));
    }
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw std::runtime_error("encoder '" + spec.name + "' produced a non-finite value");
        }
    }
}

} // namespace

HashedTextEncoder::HashedTextEncoder(std::string name, int output_dim, std::uint64_t weight_seed,
                                     TextPreprocess pre)
    : weight_seed_(weight_seed) {
    if (output_dim <= 0) throw std::invalid_argument("text encoder output_dim must be positive");
    spec_.name = std::move(name);
    spec_.modality = Modality::Text;
    spec_.output_dim = output_dim;
    spec_.text_pre = std::move(pre);

    // The digest covers the generating parameters plus a probe of the derived
    // embedding table, so any change to the embedding function shows up.
    Sha256 h;
    std::string desc = "hashed-text-v1|" + spec_.name + "|" + std::to_string(output_dim) + "|" +
                       std::to_string(weight_seed_) + "|" + spec_.text_pre.tokenizer + "|" +
                       std::to_string(spec_.text_pre.max_tokens) + "|";
    h.update(desc);
    std::vector<double> probe(static_cast<std::size_t>(output_dim));
    for (std::uint64_t token_hash = 0; token_hash < 64; ++token_hash) {
        std::fill(probe.begin(), probe.end(), 0.0);
        accumulate_embedding_row(token_hash, weight_seed_, output_dim, probe);
        h.update(probe.data(), probe.size() * sizeof(double));
    }
    digest_ = h.hex_digest();
}

std::vector<float> HashedTextEncoder::encode(std::string_view question_text) const {
    if (trim(question_text).empty()) {
        throw std::invalid_argument("text encoder '" + spec_.name + "': question text is empty");
    }
    std::vector<std::string> tokens = tokenize_lower_alnum(question_text);
    if (tokens.empty()) {
        throw std::invalid_argument("text encoder '" + spec_.name +
                                    "': question text contains no tokens");
    }
    const auto max_tokens = static_cast<std::size_t>(spec_.text_pre.max_tokens);
    if (tokens.size() > max_tokens) {
        warn("text encoder '" + spec_.name + "': input has " + std::to_string(tokens.size()) +
             " tokens, truncating to " + std::to_string(max_tokens));
        tokens.resize(max_tokens);
    }

    const int dim = spec_.output_dim;
    std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
    std::size_t rows = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        accumulate_embedding_row(fnv1a64(tokens[i]), weight_seed_, dim, acc);
        ++rows;
        if (i > 0) {
            accumulate_embedding_row(fnv1a64(tokens[i - 1] + "\x1f" + tokens[i]), weight_seed_,
                                     dim, acc);
            ++rows;
        }
    }

    std::vector<float> out(static_cast<std::size_t>(dim));
    for (int j = 0; j < dim; ++j) {
        out[static_cast<std::size_t>(j)] =
            static_cast<float>(acc[static_cast<std::size_t>(j)] / static_cast<double>(rows));
    }
    check_output(out, spec_);
    return out;
}

GridImageEncoder::GridImageEncoder(std::string name, int output_dim, std::uint64_t weight_seed,
                                   ImagePreprocess pre, int grid)
    : grid_(grid) {
    if (output_dim <= 0) throw std::invalid_argument("image encoder output_dim must be positive");
    if (grid <= 0) throw std::invalid_argument("image encoder grid must be positive");
    spec_.name = std::move(name);
    spec_.modality = Modality::Image;
    spec_.output_dim = output_dim;
    spec_.image_pre = pre;

    const int in_dim = grid_ * grid_ * 3;
    weight_.resize(static_cast<std::size_t>(output_dim) * static_cast<std::size_t>(in_dim));
    bias_.resize(static_cast<std::size_t>(output_dim));
    DetRng rng(weight_seed);
    const double bound = std::sqrt(3.0 / static_cast<double>(in_dim)); // variance 1/fan_in
    for (float& w : weight_) w = static_cast<float>((2.0 * rng.next_unit() - 1.0) * bound);
    for (float& b : bias_) b = static_cast<float>((2.0 * rng.next_unit() - 1.0) * bound);

    Sha256 h;
    std::string desc = "grid-image-v1|" + spec_.name + "|" + std::to_string(output_dim) + "|" +
                       std::to_string(grid_) + "|";
    h.update(desc);
    h.update(weight_.data(), weight_.size() * sizeof(float));
    h.update(bias_.data(), bias_.size() * sizeof(float));
    digest_ = h.hex_digest();
}

std::vector<float> GridImageEncoder::encode(const cv::Mat& image_rgb) const {
    if (image_rgb.empty()) {
        throw std::invalid_argument("image encoder '" + spec_.name + "': empty image");
    }
    cv::Mat rgb = image_rgb;
    if (rgb.channels() == 1) {
        warn("image encoder '" + spec_.name + "': grayscale input, replicating to 3 channels");
        cv::cvtColor(rgb, rgb, cv::COLOR_GRAY2RGB);
    } else if (rgb.channels() != 3) {
        throw std::invalid_argument("image encoder '" + spec_.name + "': expected 1- or 3-channel "
                                    "input, got " + std::to_string(rgb.channels()) + " channels");
    }

    cv::Mat f32;
    if (rgb.depth() == CV_8U) {
        rgb.convertTo(f32, CV_32FC3, 1.0 / 255.0);
    } else if (rgb.depth() == CV_32F) {
        f32 = rgb;
    } else {
        throw std::invalid_argument("image encoder '" + spec_.name +
                                    "': expected 8-bit or 32-bit float pixels");
    }

    const auto& pre = spec_.image_pre;
    cv::Mat resized;
    cv::resize(f32, resized, cv::Size(pre.width, pre.height), 0.0, 0.0, cv::INTER_LINEAR);

    // Block-averaged grid of normalized pixels, channel-major.
    const int in_dim = grid_ * grid_ * 3;
    std::vector<float> pooled(static_cast<std::size_t>(in_dim), 0.0f);
    std::vector<int> counts(static_cast<std::size_t>(grid_ * grid_), 0);
    for (int y = 0; y < resized.rows; ++y) {
        const int by = std::min(y * grid_ / resized.rows, grid_ - 1);
        const auto* row = resized.ptr<cv::Vec3f>(y);
        for (int x = 0; x < resized.cols; ++x) {
            const int bx = std::min(x * grid_ / resized.cols, grid_ - 1);
            const int block = by * grid_ + bx;
            ++counts[static_cast<std::size_t>(block)];
            for (int c = 0; c < 3; ++c) {
                const float normalized = (row[x][c] - pre.mean[static_cast<std::size_t>(c)]) /
                                         pre.stddev[static_cast<std::size_t>(c)];
                pooled[static_cast<std::size_t>(c * grid_ * grid_ + block)] += normalized;
            }
        }
    }
    for (int c = 0; c < 3; ++c) {
        for (int block = 0; block < grid_ * grid_; ++block) {
            pooled[static_cast<std::size_t>(c * grid_ * grid_ + block)] /=
                static_cast<float>(std::max(1, counts[static_cast<std::size_t>(block)]));
        }
    }

    const int dim = spec_.output_dim;
    std::vector<float> out(static_cast<std::size_t>(dim));
    for (int r = 0; r < dim; ++r) {
        double sum = bias_[static_cast<std::size_t>(r)];
        const float* wrow = weight_.data() + static_cast<std::size_t>(r) * in_dim;
        for (int k = 0; k < in_dim; ++k) {
            sum += static_cast<double>(wrow[k]) * pooled[static_cast<std::size_t>(k)];
        }
        out[static_cast<std::size_t>(r)] = static_cast<float>(std::tanh(sum));
    }
    check_output(out, spec_);
    return out;
}

EncoderProvider::EncoderProvider() {
    // Surrogate runtimes under the backbone names, at the widths the real
    // pooled features would have.
    register_text("roberta-large", [] {
        return std::make_unique<HashedTextEncoder>("roberta-large", 1024,
                                                   fnv1a64("roberta-large"));
    });
    register_image("resnet50", [] {
        return std::make_unique<GridImageEncoder>("resnet50", 2048, fnv1a64("resnet50"));
    });
    register_image("convnext-large", [] {
        return std::make_unique<GridImageEncoder>("convnext-large", 1536,
                                                  fnv1a64("convnext-large"));
    });
}

EncoderProvider& EncoderProvider::global() {
    static EncoderProvider provider;
    return provider;
}

std::unique_ptr<TextEncoder> EncoderProvider::make_text(const std::string& name) const {
    auto it = text_.find(name);
    if (it == text_.end()) {
        throw std::out_of_range("unknown text encoder '" + name + "'");
    }
    return it->second();
}

std::unique_ptr<ImageEncoder> EncoderProvider::make_image(const std::string& name) const {
    auto it = image_.find(name);
    if (it == image_.end()) {
        throw std::out_of_range("unknown image encoder '" + name + "'");
    }
    return it->second();
}

void EncoderProvider::register_text(const std::string& name,
                                    std::function<std::unique_ptr<TextEncoder>()> factory) {
    text_[name] = std::move(factory);
}

void EncoderProvider::register_image(const std::string& name,
                                     std::function<std::unique_ptr<ImageEncoder>()> factory) {
    image_[name] = std::move(factory);
}

std::vector<std::string> EncoderProvider::known_text_encoders() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : text_) names.push_back(name);
    std::sort(names.begin(), names.end());
    return names;
}

std::vector<std::string> EncoderProvider::known_image_encoders() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : image_) names.push_back(name);
    std::sort(names.begin(), names.end());
    return names;
}

cv::Mat load_image_rgb(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
        throw LoadError("failed to decode image: " + path.string());
    }
    if (raw.depth() == CV_16U) {
        raw.convertTo(raw, CV_8U, 255.0 / 65535.0);
    } else if (raw.depth() != CV_8U) {
        throw LoadError("unsupported pixel depth in image: " + path.string());
    }

    cv::Mat rgb;
    switch (raw.channels()) {
    case 1:
        warn("image " + path.string() + " is grayscale, replicating to 3 channels");
        cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
        break;
    case 3:
        cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
        break;
    case 4:
        cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
        break;
    default:
        throw LoadError("unsupported channel count (" + std::to_string(raw.channels()) +
                        ") in image: " + path.string());
    }
    return rgb;
}

namespace {

/// Shared extraction driver: computes one vector per item into a fixed slot
/// (so worker scheduling cannot change the result), then finalizes the store
/// in a single atomic manifest write.
template <typename Item, typename EncodeFn>
FeatureStore extract_impl(const std::vector<Item>& items, const std::string& encoder_name,
                          int output_dim, EncodeFn&& encode_item,
                          const std::filesystem::path& store_dir, const ExtractOptions& options) {
    if (options.batch_size <= 0) throw std::invalid_argument("batch_size must be positive");

    if (FeatureStore::is_complete(store_dir)) {
        FeatureStore existing = FeatureStore::open(store_dir); // validates checksum
        std::vector<std::string> want, have = existing.item_ids();
        want.reserve(items.size());
        for (const Item& item : items) want.push_back(item.id);
        std::sort(want.begin(), want.end());
        std::sort(have.begin(), have.end());
        if (existing.encoder_name() != encoder_name || existing.output_dim() != output_dim ||
            want != have) {
            throw std::runtime_error("feature store " + store_dir.string() +
                                     " was built for a different encoder or item set; "
                                     "delete the store directory and re-extract");
        }
        return existing;
    }
    // A payload without a manifest is a leftover from an interrupted run.
    std::filesystem::remove(store_dir / FeatureStore::kPayloadFile);

    const std::size_t n = items.size();
    const auto dim = static_cast<std::size_t>(output_dim);
    std::vector<float> payload(n * dim);
    std::vector<std::string> ids(n);

    const std::size_t batch = static_cast<std::size_t>(options.batch_size);
    const std::size_t n_batches = (n + batch - 1) / batch;
    int workers = options.workers > 0 ? options.workers
                                      : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(n_batches)));

    auto run_batch = [&](std::size_t b) {
        const std::size_t begin = b * batch;
        const std::size_t end = std::min(n, begin + batch);
        for (std::size_t i = begin; i < end; ++i) {
            std::vector<float> v = encode_item(items[i]);
            if (v.size() != dim) {
                throw std::runtime_error("encoder '" + encoder_name + "' produced width " +
                                         std::to_string(v.size()) + " for item '" + items[i].id +
                                         "', expected " + std::to_string(dim));
            }
            std::memcpy(payload.data() + i * dim, v.data(), dim * sizeof(float));
            ids[i] = items[i].id;
        }
    };

    if (workers <= 1) {
        for (std::size_t b = 0; b < n_batches; ++b) run_batch(b);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> futures;
        futures.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) {
            futures.push_back(std::async(std::launch::async, [&] {
                for (;;) {
                    const std::size_t b = next.fetch_add(1);
                    if (b >= n_batches) return;
                    run_batch(b);
                }
            }));
        }
        for (auto& f : futures) f.get(); // rethrows the first worker failure
    }

    return FeatureStore::write(store_dir, encoder_name, output_dim, std::move(ids),
                               std::move(payload));
}

} // namespace

FeatureStore extract_text_features(const std::vector<TextItem>& items, const TextEncoder& encoder,
                                   const std::filesystem::path& store_dir,
                                   const ExtractOptions& options) {
    return extract_impl(items, encoder.spec().name, encoder.spec().output_dim,
                        [&](const TextItem& item) { return encoder.encode(item.text); },
                        store_dir, options);
}

FeatureStore extract_image_features(const std::vector<ImageItem>& items,
                                    const ImageEncoder& encoder,
                                    const std::filesystem::path& store_dir,
                                    const ExtractOptions& options) {
    return extract_impl(items, encoder.spec().name, encoder.spec().output_dim,
                        [&](const ImageItem& item) {
                            return encoder.encode(load_image_rgb(item.path));
                        },
                        store_dir, options);
}

} // namespace fvqa
