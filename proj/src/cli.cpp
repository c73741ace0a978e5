#include "fvqa/cli.hpp"

#include <algorithm>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "fvqa/common.hpp"
#include "fvqa/dataset.hpp"
#include "fvqa/encoders.hpp"
#include "fvqa/evaluation.hpp"

namespace fvqa::cli {

namespace {

namespace fs = std::filesystem;

void write_resolved_config(const ExperimentConfig& cfg, const std::string& command) {
    write_file_atomic(cfg.out_dir / ("config." + command + ".json"), cfg.to_json().dump(2) + "\n");
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// One image file per annotation stem. Scans the directory once; ambiguous
/// stems (same stem, two extensions) are an error rather than a guess.
std::unordered_map<std::string, fs::path> index_image_dir(const fs::path& dir) {
    static const std::set<std::string> kExtensions = {".jpg", ".jpeg", ".png",
                                                      ".bmp", ".tif",  ".tiff"};
    if (!fs::is_directory(dir)) {
        throw LoadError("image directory not found: " + dir.string());
    }
    std::unordered_map<std::string, fs::path> by_stem;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (kExtensions.count(lower(entry.path().extension().string())) == 0) continue;
        const std::string stem = entry.path().stem().string();
        auto [it, inserted] = by_stem.emplace(stem, entry.path());
        if (!inserted) {
            throw LoadError("ambiguous image stem '" + stem + "': " + it->second.string() +
                            " vs " + entry.path().string());
        }
    }
    return by_stem;
}

int cmd_split(const ExperimentConfig& cfg) {
    const auto pairs = load_annotations(cfg.annotations);
    const DatasetSplit split = split_by_image(pairs, cfg.split_fraction, cfg.split_seed);
    const fs::path path = cfg.default_split_path();
    write_split_file(split, path);
    write_resolved_config(cfg, "split");
    std::cout << "split: " << split.image_ids_train.size() << " train images ("
              << split.train.size() << " questions), " << split.image_ids_test.size()
              << " test images (" << split.test.size() << " questions)\n"
              << "wrote " << path.string() << "\n";
    return 0;
}

void report_extraction(bool cached, const FeatureStore& store, const fs::path& dir) {
    std::cout << (cached ? "cache valid: " : "extracted: ") << store.size() << " '"
              << store.encoder_name() << "' vectors in " << dir.string() << "\n";
}

int cmd_extract(const ExperimentConfig& cfg, const std::string& modality,
                const std::string& encoder_override, const ExtractOptions& options) {
    const auto pairs = load_annotations(cfg.annotations);
    if (modality == "text") {
        const std::string name = encoder_override.empty() ? cfg.text_encoder : encoder_override;
        auto encoder = EncoderProvider::global().make_text(name);
        std::vector<TextItem> items;
        items.reserve(pairs.size());
        for (const QAPair& p : pairs) items.push_back({p.question_id, p.question_text});
        const fs::path dir = cfg.features_dir(name);
        const bool cached = FeatureStore::is_complete(dir);
        report_extraction(cached, extract_text_features(items, *encoder, dir, options), dir);
    } else if (modality == "image") {
        const std::string name = encoder_override.empty() ? cfg.image_encoder : encoder_override;
        auto encoder = EncoderProvider::global().make_image(name);
        const auto by_stem = index_image_dir(cfg.image_dir);
        std::set<std::string> image_ids;
        for (const QAPair& p : pairs) image_ids.insert(p.image_id);
        std::vector<ImageItem> items;
        items.reserve(image_ids.size());
        for (const std::string& id : image_ids) {
            auto it = by_stem.find(id);
            if (it == by_stem.end()) {
                throw LoadError("no image file for id '" + id + "' in " +
                                cfg.image_dir.string());
            }
            items.push_back({id, it->second});
        }
        const fs::path dir = cfg.features_dir(name);
        const bool cached = FeatureStore::is_complete(dir);
        report_extraction(cached, extract_image_features(items, *encoder, dir, options), dir);
    } else {
        throw std::invalid_argument("unknown modality '" + modality +
                                    "' (expected image or text)");
    }
    write_resolved_config(cfg, "extract");
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& method,
              const std::string& backbone, const fs::path& split_path) {
    const auto pairs = load_annotations(cfg.annotations);
    const DatasetSplit split = apply_split_file(pairs, split_path);

    const std::string image_encoder = backbone_encoder_name(backbone);
    const FeatureStore image_store = FeatureStore::open(cfg.features_dir(image_encoder));
    const FeatureStore text_store = FeatureStore::open(cfg.features_dir(cfg.text_encoder));

    FusionConfig fusion;
    fusion.method = fusion_method_from_string(method);
    fusion.image_dim = image_store.output_dim();
    fusion.text_dim = text_store.output_dim();
    fusion.common_dim = cfg.common_dim;
    fusion.hidden_dims = cfg.hidden_dims;
    fusion.seed = cfg.model_seed;
    FusionModel model(fusion);

    const std::string tag = model_tag(backbone, method);
    const int report_every = std::max(1, cfg.train.epochs / 10);
    TrainLog log = train(model, split.train, image_store, text_store, cfg.train,
                         [&](int epoch, const EpochStats& stats) {
                             if ((epoch + 1) % report_every == 0 ||
                                 epoch + 1 == cfg.train.epochs) {
                                 std::cout << tag << " epoch " << (epoch + 1) << "/"
                                           << cfg.train.epochs << "  loss " << stats.mean_loss
                                           << "  acc " << stats.accuracy << "\n";
                             }
                         });

    const fs::path ckpt_path = cfg.checkpoints_dir() / (tag + ".ckpt");
    fs::create_directories(cfg.checkpoints_dir());
    save_checkpoint(ckpt_path, model, tag);
    write_file_atomic(cfg.checkpoints_dir() / (tag + ".trainlog.json"),
                      log.to_json().dump(2) + "\n");
    write_resolved_config(cfg, "train");
    std::cout << "trained " << tag << " in " << format_mmss(log.total_seconds) << " ("
              << log.optimizer_steps << " steps), wrote " << ckpt_path.string() << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint_path,
             const std::string& backbone, const fs::path& split_path) {
    const auto pairs = load_annotations(cfg.annotations);
    const DatasetSplit split = apply_split_file(pairs, split_path);

    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    const std::string image_encoder = backbone_encoder_name(backbone);
    const FeatureStore image_store = FeatureStore::open(cfg.features_dir(image_encoder));
    const FeatureStore text_store = FeatureStore::open(cfg.features_dir(cfg.text_encoder));

    std::vector<Misprediction> mispredictions;
    EvalReport report =
        evaluate(ckpt.model, split.test, image_store, text_store, ckpt.model_tag,
                 &mispredictions);
    report.split_ref = split_path.string();
    report.config_ref = (cfg.out_dir / "config.eval.json").string();

    // Training time travels with the checkpoint's log when present.
    fs::path trainlog_path = checkpoint_path;
    trainlog_path.replace_extension(".trainlog.json");
    if (fs::exists(trainlog_path)) {
        const auto log = nlohmann::json::parse(read_text_file(trainlog_path));
        report.train_seconds = log.at("total_seconds").get<double>();
    }

    fs::create_directories(cfg.reports_dir());
    const fs::path report_path = cfg.reports_dir() / (report.model_tag + ".json");
    write_file_atomic(report_path, report.to_json().dump(2) + "\n");
    write_mispredictions_csv(cfg.reports_dir() / (report.model_tag + ".misclassified.csv"),
                             mispredictions);
    write_resolved_config(cfg, "eval");
    std::cout << render_table({report}) << "wrote " << report_path.string() << "\n";
    return 0;
}

int cmd_report(const std::vector<fs::path>& report_files, bool include_reference,
               const fs::path& reference_file, const fs::path& out_path) {
    std::vector<EvalReport> reports;
    std::set<std::string> seen_tags;
    for (const fs::path& file : report_files) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(file));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("failed to parse report " + file.string() + ": " + e.what());
        }
        EvalReport report = EvalReport::from_json(doc);
        if (!seen_tags.insert(report.model_tag).second) {
            int suffix = 2;
            std::string candidate;
            do {
                candidate = report.model_tag + "-" + std::to_string(suffix++);
            } while (!seen_tags.insert(candidate).second);
            warn("duplicate model tag '" + report.model_tag + "', renaming to '" + candidate +
                 "'");
            report.model_tag = candidate;
        }
        reports.push_back(std::move(report));
    }

    std::vector<ReferenceRow> reference;
    if (include_reference) {
        reference = load_reference_rows(reference_file.empty() ? default_reference_path()
                                                               : reference_file);
    }

    const std::string table = render_table(reports, reference);
    std::cout << table;
    if (!out_path.empty()) {
        write_file_atomic(out_path, table);
        fs::path sidecar = out_path;
        sidecar += ".json";
        write_file_atomic(sidecar, table_json(reports, reference).dump(2) + "\n");
        std::cout << "wrote " << out_path.string() << " and " << sidecar.string() << "\n";
    }
    return 0;
}

/// --config is applied before the other flags so explicit flags win.
void preload_config(const std::vector<std::string>& args, ExperimentConfig& cfg) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string value;
        if (args[i] == "--config" && i + 1 < args.size()) {
            value = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            value = args[i].substr(std::string("--config=").size());
        } else {
            continue;
        }
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(value));
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("failed to parse config file " + value + ": " + e.what());
        }
        cfg.merge_json(doc);
    }
}

} // namespace

void ExperimentConfig::merge_json(const nlohmann::json& j) {
    if (j.contains("annotations")) annotations = j.at("annotations").get<std::string>();
    if (j.contains("image_dir")) image_dir = j.at("image_dir").get<std::string>();
    if (j.contains("out_dir")) out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("split")) {
        const auto& s = j.at("split");
        if (s.contains("fraction")) split_fraction = s.at("fraction").get<double>();
        if (s.contains("seed")) split_seed = s.at("seed").get<std::uint64_t>();
    }
    if (j.contains("encoders")) {
        const auto& e = j.at("encoders");
        if (e.contains("text")) text_encoder = e.at("text").get<std::string>();
        if (e.contains("image")) image_encoder = e.at("image").get<std::string>();
    }
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        if (f.contains("method")) fusion_method = f.at("method").get<std::string>();
        if (f.contains("common_dim")) common_dim = f.at("common_dim").get<int>();
        if (f.contains("hidden_dims")) {
            hidden_dims = {f.at("hidden_dims").at(0).get<int>(),
                           f.at("hidden_dims").at(1).get<int>()};
        }
        if (f.contains("seed")) model_seed = f.at("seed").get<std::uint64_t>();
    }
    if (j.contains("train")) train = TrainConfig::from_json(j.at("train"));
}

nlohmann::json ExperimentConfig::to_json() const {
    return {
        {"annotations", annotations.string()},
        {"image_dir", image_dir.string()},
        {"out_dir", out_dir.string()},
        {"split", {{"fraction", split_fraction}, {"seed", split_seed}}},
        {"encoders", {{"text", text_encoder}, {"image", image_encoder}}},
        {"fusion",
         {{"method", fusion_method},
          {"common_dim", common_dim},
          {"hidden_dims", {hidden_dims[0], hidden_dims[1]}},
          {"seed", model_seed}}},
        {"train", train.to_json()},
    };
}

std::filesystem::path ExperimentConfig::default_split_path() const {
    return out_dir / "splits" / ("split-seed" + std::to_string(split_seed) + ".json");
}

std::filesystem::path ExperimentConfig::features_dir(const std::string& encoder_name) const {
    return out_dir / "features" / encoder_name;
}

std::string backbone_encoder_name(const std::string& backbone) {
    if (backbone == "resnet50") return "resnet50";
    if (backbone == "convnext" || backbone == "convnext-large") return "convnext-large";
    return backbone;
}

std::string model_tag(const std::string& backbone, const std::string& method) {
    std::string prefix = backbone_encoder_name(backbone);
    if (prefix == "resnet50") prefix = "R50";
    else if (prefix == "convnext-large") prefix = "CNX";
    return prefix + "-" + method;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("fvqa");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
    ExperimentConfig cfg;
    try {
        preload_config({argv + 1, argv + argc}, cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    CLI::App app{"FloodNet VQA baseline pipeline: cached frozen-encoder features, "
                 "small fusion heads, Table-style accuracy reports"};
    app.require_subcommand(1);

    std::string config_file; // consumed by preload_config; registered for --help
    app.add_option("--config", config_file, "JSON config file (flags override it)")
        ->expected(1);

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON config file (flags override it)");
        sub->add_option("--out-dir", cfg.out_dir, "output directory root");
        sub->add_option("--annotations", cfg.annotations, "FloodNet VQA annotation JSON");
    };

    // split
    auto* split = app.add_subcommand("split", "build and pin an image-disjoint split");
    add_common(split);
    split->add_option("--fraction", cfg.split_fraction, "test image fraction");
    split->add_option("--seed", cfg.split_seed, "split shuffle seed");

    // extract
    std::string modality;
    std::string encoder_override;
    ExtractOptions extract_options;
    auto* extract = app.add_subcommand("extract", "run a frozen encoder and cache features");
    add_common(extract);
    extract->add_option("--modality", modality, "image | text")->required();
    extract->add_option("--encoder", encoder_override, "encoder name (default from config)");
    extract->add_option("--image-dir", cfg.image_dir, "directory with the FloodNet images");
    extract->add_option("--batch-size", extract_options.batch_size, "items per worker batch");
    extract->add_option("--workers", extract_options.workers, "extraction threads (0 = auto)");

    // train
    std::string method = cfg.fusion_method;
    std::string backbone = cfg.image_encoder; // accepts both shorthands and full names
    std::string split_file;
    std::uint64_t train_seed = 0;
    auto* train_cmd = app.add_subcommand("train", "train a fusion head on cached features");
    add_common(train_cmd);
    train_cmd->add_option("--method", method, "cat | add | mul");
    train_cmd->add_option("--backbone", backbone, "resnet50 | convnext");
    train_cmd->add_option("--split", split_file, "pinned split file (default from out-dir)");
    train_cmd->add_option("--epochs", cfg.train.epochs, "training epochs");
    train_cmd->add_option("--batch-size", cfg.train.batch_size, "mini-batch size");
    train_cmd->add_option("--lr", cfg.train.learning_rate, "Adam learning rate");
    auto* seed_opt = train_cmd->add_option("--seed", train_seed,
                                           "experiment seed (model init and shuffling)");

    // eval
    std::string checkpoint_file;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_file, "checkpoint path")->required();
    eval_cmd->add_option("--backbone", backbone, "image feature store to score against");
    eval_cmd->add_option("--split", split_file, "pinned split file (default from out-dir)");

    // report
    std::vector<std::string> report_files;
    bool include_reference = false;
    std::string reference_file;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "render a combined results table");
    report_cmd->add_option("reports", report_files, "report JSON files");
    report_cmd->add_flag("--include-reference", include_reference,
                         "append previously reported rows");
    report_cmd->add_option("--reference-file", reference_file,
                           "override the bundled reference table");
    report_cmd->add_option("--out", report_out, "also write the table (and a JSON sidecar)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (split->parsed()) return cmd_split(cfg);
        if (extract->parsed()) return cmd_extract(cfg, modality, encoder_override,
                                                  extract_options);
        if (train_cmd->parsed()) {
            if (seed_opt->count() > 0) {
                cfg.model_seed = train_seed;
                cfg.train.seed = train_seed;
            }
            const fs::path split_path =
                split_file.empty() ? cfg.default_split_path() : fs::path(split_file);
            return cmd_train(cfg, method, backbone, split_path);
        }
        if (eval_cmd->parsed()) {
            const fs::path split_path =
                split_file.empty() ? cfg.default_split_path() : fs::path(split_file);
            return cmd_eval(cfg, checkpoint_file, backbone, split_path);
        }
        if (report_cmd->parsed()) {
            std::vector<fs::path> files(report_files.begin(), report_files.end());
            return cmd_report(files, include_reference, reference_file, report_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace fvqa::cli
