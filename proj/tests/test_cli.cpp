#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <opencv2/imgcodecs.hpp>

#include "fvqa/cli.hpp"
#include "fvqa/common.hpp"
#include "fvqa/evaluation.hpp"
#include "testutil.hpp"

using namespace fvqa;

namespace {

/// Synthetic dataset on disk: annotation JSON plus one PNG per image id.
struct PipelineFixture {
    test::TempDir tmp{"cli"};
    std::filesystem::path annotations;
    std::filesystem::path image_dir;
    std::filesystem::path out_dir;

    PipelineFixture() {
        const auto pairs = test::synthetic_pairs(12, 2, 2025);
        annotations = tmp / "Questions.json";
        write_file_atomic(annotations, test::to_annotation_json(pairs).dump(2));

        image_dir = tmp / "Images";
        std::filesystem::create_directories(image_dir);
        DetRng rng(77);
        for (const std::string& id : test::image_ids_of(pairs)) {
            cv::Mat img(24, 36, CV_8UC3);
            for (int y = 0; y < img.rows; ++y) {
                auto* row = img.ptr<unsigned char>(y);
                for (int x = 0; x < img.cols * 3; ++x) {
                    row[x] = static_cast<unsigned char>(rng.bounded(256));
                }
            }
            cv::imwrite((image_dir / (id + ".png")).string(), img);
        }
        out_dir = tmp / "run";
    }

    std::vector<std::string> base_args() const {
        return {"--annotations", annotations.string(), "--out-dir", out_dir.string()};
    }
};

int run_cmd(const std::string& cmd, std::vector<std::string> args,
            const std::vector<std::string>& base) {
    std::vector<std::string> argv{cmd};
    argv.insert(argv.end(), base.begin(), base.end());
    argv.insert(argv.end(), args.begin(), args.end());
    return cli::run(argv);
}

} // namespace

TEST_CASE("model tags follow the (model)-(method) shorthand") {
    CHECK(cli::model_tag("resnet50", "mul") == "R50-mul");
    CHECK(cli::model_tag("convnext", "cat") == "CNX-cat");
    CHECK(cli::model_tag("convnext-large", "add") == "CNX-add");
    CHECK(cli::backbone_encoder_name("convnext") == "convnext-large");
}

TEST_CASE("full pipeline: split, extract, train, eval, report") {
    PipelineFixture fx;
    const auto base = fx.base_args();

    // --- split ---
    REQUIRE(run_cmd("split", {"--seed", "42", "--fraction", "0.25"}, base) == 0);
    const auto split_path = fx.out_dir / "splits" / "split-seed42.json";
    REQUIRE(std::filesystem::exists(split_path));
    const std::string split_bytes = read_text_file(split_path);

    // rerun is byte-identical
    REQUIRE(run_cmd("split", {"--seed", "42", "--fraction", "0.25"}, base) == 0);
    CHECK(read_text_file(split_path) == split_bytes);

    // resolved config copy lands next to the outputs
    CHECK(std::filesystem::exists(fx.out_dir / "config.split.json"));

    // --- extract (text + image) ---
    REQUIRE(run_cmd("extract", {"--modality", "text"}, base) == 0);
    REQUIRE(run_cmd("extract",
                    {"--modality", "image", "--image-dir", fx.image_dir.string(),
                     "--batch-size", "4"},
                    base) == 0);
    REQUIRE(std::filesystem::exists(fx.out_dir / "features" / "roberta-large" /
                                    "manifest.json"));
    REQUIRE(std::filesystem::exists(fx.out_dir / "features" / "resnet50" / "manifest.json"));

    // rerun hits the cache (and must not error)
    REQUIRE(run_cmd("extract",
                    {"--modality", "image", "--image-dir", fx.image_dir.string()},
                    base) == 0);

    // --- train (twice, determinism) ---
    const std::vector<std::string> train_args = {"--method", "mul",    "--backbone",
                                                 "resnet50", "--seed", "7",
                                                 "--epochs", "2",      "--batch-size", "8"};
    REQUIRE(run_cmd("train", train_args, base) == 0);
    const auto ckpt_path = fx.out_dir / "checkpoints" / "R50-mul.ckpt";
    const auto trainlog_path = fx.out_dir / "checkpoints" / "R50-mul.trainlog.json";
    REQUIRE(std::filesystem::exists(ckpt_path));
    REQUIRE(std::filesystem::exists(trainlog_path));
    const std::string ckpt_bytes = read_text_file(ckpt_path);
    const auto losses_of = [&] {
        const auto log = nlohmann::json::parse(read_text_file(trainlog_path));
        std::vector<double> losses;
        for (const auto& e : log.at("epochs")) {
            losses.push_back(e.at("mean_loss").get<double>());
        }
        return losses;
    };
    const auto first_losses = losses_of();

    REQUIRE(run_cmd("train", train_args, base) == 0);
    CHECK(read_text_file(ckpt_path) == ckpt_bytes); // identical final parameters
    CHECK(losses_of() == first_losses);             // identical loss trajectory

    // --- eval ---
    REQUIRE(run_cmd("eval", {"--checkpoint", ckpt_path.string()}, base) == 0);
    const auto report_path = fx.out_dir / "reports" / "R50-mul.json";
    REQUIRE(std::filesystem::exists(report_path));
    CHECK(std::filesystem::exists(fx.out_dir / "reports" / "R50-mul.misclassified.csv"));

    const EvalReport report =
        EvalReport::from_json(nlohmann::json::parse(read_text_file(report_path)));
    CHECK(report.model_tag == "R50-mul");
    CHECK(decompose_check(report));
    CHECK(report.train_seconds >= 0.0); // picked up from the train log

    // --- report (duplicate tags get disambiguated) ---
    const auto copy_path = fx.out_dir / "reports" / "copy.json";
    std::filesystem::copy_file(report_path, copy_path);
    const auto table_path = fx.out_dir / "reports" / "table.txt";
    REQUIRE(cli::run({"report", report_path.string(), copy_path.string(),
                      "--include-reference", "--out", table_path.string()}) == 0);
    const std::string table = read_text_file(table_path);
    CHECK(table.find("R50-mul") != std::string::npos);
    CHECK(table.find("R50-mul-2") != std::string::npos);
    CHECK(table.find("CNX-mul [ref]") != std::string::npos);
    CHECK(std::filesystem::exists(fx.out_dir / "reports" / "table.txt.json"));
}

TEST_CASE("usage and validation errors exit nonzero") {
    PipelineFixture fx;
    const auto base = fx.base_args();

    SUBCASE("fraction 0 is rejected") {
        CHECK(run_cmd("split", {"--fraction", "0"}, base) != 0);
    }
    SUBCASE("missing image directory") {
        CHECK(run_cmd("extract",
                      {"--modality", "image", "--image-dir",
                       (fx.tmp / "nowhere").string()},
                      base) != 0);
    }
    SUBCASE("unknown subcommand") {
        CHECK(cli::run({"frobnicate"}) != 0);
    }
    SUBCASE("train without a split file") {
        CHECK(run_cmd("train", {"--method", "mul"}, base) != 0);
    }
    SUBCASE("checkpoint/store width mismatch") {
        REQUIRE(run_cmd("split", {"--seed", "42", "--fraction", "0.25"}, base) == 0);
        REQUIRE(run_cmd("extract", {"--modality", "text"}, base) == 0);
        REQUIRE(run_cmd("extract",
                        {"--modality", "image", "--image-dir", fx.image_dir.string()},
                        base) == 0);
        REQUIRE(run_cmd("extract",
                        {"--modality", "image", "--image-dir", fx.image_dir.string(),
                         "--encoder", "convnext-large"},
                        base) == 0);
        REQUIRE(run_cmd("train", {"--method", "cat", "--epochs", "1"}, base) == 0);
        // R50 checkpoint scored against the convnext store: widths disagree
        const auto ckpt = fx.out_dir / "checkpoints" / "R50-cat.ckpt";
        CHECK(run_cmd("eval", {"--checkpoint", ckpt.string(), "--backbone", "convnext"},
                      base) != 0);
    }
}

TEST_CASE("config file values apply and flags override them") {
    PipelineFixture fx;
    nlohmann::json config = {
        {"annotations", fx.annotations.string()},
        {"out_dir", fx.out_dir.string()},
        {"split", {{"fraction", 0.25}, {"seed", 11}}},
    };
    const auto config_path = fx.tmp / "config.json";
    write_file_atomic(config_path, config.dump(2));

    REQUIRE(cli::run({"split", "--config", config_path.string()}) == 0);
    CHECK(std::filesystem::exists(fx.out_dir / "splits" / "split-seed11.json"));

    // an explicit flag beats the file
    REQUIRE(cli::run({"split", "--config", config_path.string(), "--seed", "12"}) == 0);
    CHECK(std::filesystem::exists(fx.out_dir / "splits" / "split-seed12.json"));

    const auto resolved =
        nlohmann::json::parse(read_text_file(fx.out_dir / "config.split.json"));
    CHECK(resolved.at("split").at("seed").get<std::uint64_t>() == 12);
    CHECK(resolved.at("split").at("fraction").get<double>() == doctest::Approx(0.25));
}
