#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <map>

#include "fvqa/common.hpp"
#include "fvqa/fusion.hpp"
#include "fvqa/rng.hpp"
#include "testutil.hpp"

using namespace fvqa;

namespace {

using Mat = Eigen::MatrixXd;
using Model = FusionModelT<double>;
using fvqa::test::gradient_check;
using fvqa::test::random_matrix;
using fvqa::test::small_fusion_config;

} // namespace

TEST_CASE("config validation") {
    FusionConfig config;
    config.image_dim = 0;
    config.text_dim = 8;
    CHECK_THROWS_AS((void)FusionModel(config), std::invalid_argument);
    config.image_dim = 8;
    config.num_classes = 10;
    CHECK_THROWS_AS((void)FusionModel(config), std::invalid_argument);
}

TEST_CASE("layer shapes follow the config") {
    FusionConfig concat;
    concat.method = FusionMethod::Concat;
    concat.image_dim = 2048;
    concat.text_dim = 1024;
    FusionModel cat_model(concat);
    CHECK(cat_model.params().fc1.weight.cols() == 3072); // concat width is the sum
    CHECK(cat_model.params().fc1.weight.rows() == 512);
    CHECK(cat_model.params().fc2.weight.rows() == 256);
    CHECK(cat_model.params().fc3.weight.rows() == 56);
    CHECK(cat_model.params().proj_image.weight.size() == 0);

    FusionConfig mul = concat;
    mul.method = FusionMethod::Mul;
    FusionModel mul_model(mul);
    CHECK(mul_model.params().proj_image.weight.rows() == 512); // common dimension
    CHECK(mul_model.params().proj_image.weight.cols() == 2048);
    CHECK(mul_model.params().proj_text.weight.rows() == 512);
    CHECK(mul_model.params().fc1.weight.cols() == 512);
}

TEST_CASE("initialization is deterministic per (config, seed)") {
    FusionConfig config;
    config.method = FusionMethod::Mul;
    config.image_dim = 12;
    config.text_dim = 9;
    config.common_dim = 7;
    config.hidden_dims = {6, 5};
    config.seed = 21;

    FusionModel a(config), b(config);
    bool identical = true;
    for_each_param(a.params(), config.method, [&](const char* name, const auto& array) {
        for_each_param(b.params(), config.method, [&](const char* bname, const auto& barray) {
            if (std::strcmp(name, bname) == 0) {
                identical = identical &&
                            std::memcmp(array.data(), barray.data(),
                                        sizeof(float) * static_cast<std::size_t>(array.size())) ==
                                0;
            }
        });
    });
    CHECK(identical);

    config.seed = 22;
    FusionModel c(config);
    CHECK(a.params().fc1.weight != c.params().fc1.weight);
}

TEST_CASE("forward emits 56 finite logits for every method") {
    DetRng rng(5);
    for (FusionMethod method : {FusionMethod::Concat, FusionMethod::Add, FusionMethod::Mul}) {
        for (int trial = 0; trial < 3; ++trial) {
            FusionConfig config = small_fusion_config(method, rng);
            Model model(config);
            const Mat image = random_matrix(config.image_dim, 4, rng);
            const Mat text = random_matrix(config.text_dim, 4, rng);
            const Mat logits = model.forward_batch(image, text);
            CHECK(logits.rows() == 56);
            CHECK(logits.cols() == 4);
            CHECK(logits.allFinite());
        }
    }
}

TEST_CASE("elementwise fusion combines the projected vectors") {
    // Zero projection weights with chosen biases make the projections produce
    // exactly [1,2,3] and [4,5,6] regardless of input.
    FusionConfig config;
    config.image_dim = 2;
    config.text_dim = 2;
    config.common_dim = 3;
    config.hidden_dims = {4, 4};
    config.seed = 1;

    for (FusionMethod method : {FusionMethod::Mul, FusionMethod::Add}) {
        config.method = method;
        Model model(config);
        model.params().proj_image.weight.setZero();
        model.params().proj_text.weight.setZero();
        model.params().proj_image.bias << 1, 2, 3;
        model.params().proj_text.bias << 4, 5, 6;

        Model::Cache cache;
        const Mat image = Mat::Zero(2, 1);
        const Mat text = Mat::Zero(2, 1);
        (void)model.forward_batch(image, text, &cache);
        Eigen::Vector3d expected = method == FusionMethod::Mul
                                       ? Eigen::Vector3d(4, 10, 18)
                                       : Eigen::Vector3d(5, 7, 9);
        CHECK(cache.fused.col(0).isApprox(expected, 1e-12));

        // operator-level commutativity: swapping the projected vectors gives
        // the same fused vector
        model.params().proj_image.bias << 4, 5, 6;
        model.params().proj_text.bias << 1, 2, 3;
        Model::Cache swapped;
        (void)model.forward_batch(image, text, &swapped);
        CHECK(swapped.fused.col(0).isApprox(expected, 1e-12));
    }
}

TEST_CASE("width mismatches name the offending modality") {
    FusionConfig config;
    config.method = FusionMethod::Concat;
    config.image_dim = 8;
    config.text_dim = 4;
    FusionModel model(config);
    Eigen::MatrixXf wrong_image = Eigen::MatrixXf::Zero(7, 1);
    Eigen::MatrixXf text = Eigen::MatrixXf::Zero(4, 1);
    CHECK_THROWS_WITH_AS((void)model.forward_batch(wrong_image, text),
                         doctest::Contains("image"), std::invalid_argument);
    Eigen::MatrixXf image = Eigen::MatrixXf::Zero(8, 1);
    Eigen::MatrixXf wrong_text = Eigen::MatrixXf::Zero(3, 1);
    CHECK_THROWS_WITH_AS((void)model.forward_batch(image, wrong_text),
                         doctest::Contains("text"), std::invalid_argument);
}

TEST_CASE("predict decodes the argmax with stable tie-breaking") {
    Eigen::VectorXf one_hot = Eigen::VectorXf::Zero(56);
    one_hot(3) = 5.0f;
    CHECK(predict(one_hot) == 3);

    Eigen::VectorXf equal = Eigen::VectorXf::Constant(56, 0.25f);
    CHECK(predict(equal) == 0); // lowest index wins ties

    Eigen::VectorXf with_nan = equal;
    with_nan(10) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS((void)predict(with_nan), std::invalid_argument);

    // brute-force linear-scan oracle on random logits
    DetRng rng(33);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXf logits(56);
        for (int i = 0; i < 56; ++i) {
            logits(i) = static_cast<float>(2.0 * rng.next_unit() - 1.0);
        }
        int scan_best = 0;
        for (int i = 1; i < 56; ++i) {
            if (logits(i) > logits(scan_best)) scan_best = i;
        }
        CHECK(predict(logits) == scan_best);

        // shift invariance
        Eigen::VectorXf shifted = logits.array() + 3.5f;
        CHECK(predict(shifted) == scan_best);
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    DetRng rng(2718);
    for (FusionMethod method : {FusionMethod::Concat, FusionMethod::Add, FusionMethod::Mul}) {
        for (int trial = 0; trial < 4; ++trial) {
            const FusionConfig config = small_fusion_config(method, rng);
            const fvqa::test::GradCheckResult result = gradient_check(config, rng.next_u64());
            CAPTURE(static_cast<int>(method));
            CAPTURE(trial);
            CHECK(result.params_checked > 0);
            CHECK(result.max_rel_error < 1e-4);
            CHECK(result.max_small_abs_error < 1e-8);
        }
    }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    test::TempDir tmp("ckpt");
    FusionConfig config;
    config.method = FusionMethod::Mul;
    config.image_dim = 24;
    config.text_dim = 16;
    config.common_dim = 12;
    config.hidden_dims = {10, 8};
    config.seed = 77;
    FusionModel model(config);

    const auto path = tmp / "m.ckpt";
    save_checkpoint(path, model, "CNX-mul");
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.model_tag == "CNX-mul");
    CHECK(loaded.model.config().method == FusionMethod::Mul);
    CHECK(loaded.model.config().image_dim == 24);

    bool identical = true;
    for_each_param(model.params(), config.method, [&](const char* name, const auto& array) {
        for_each_param(loaded.model.params(), config.method,
                       [&](const char* lname, const auto& larray) {
                           if (std::strcmp(name, lname) == 0) {
                               identical = identical &&
                                           std::memcmp(array.data(), larray.data(),
                                                       sizeof(float) * static_cast<std::size_t>(
                                                                           array.size())) == 0;
                           }
                       });
    });
    CHECK(identical);

    // same trained weights produce the same bytes on rewrite
    save_checkpoint(tmp / "m2.ckpt", loaded.model, "CNX-mul");
    CHECK(read_text_file(path) == read_text_file(tmp / "m2.ckpt"));

    write_file_atomic(tmp / "junk.ckpt", "definitely not a checkpoint");
    CHECK_THROWS_AS((void)load_checkpoint(tmp / "junk.ckpt"), LoadError);
}
