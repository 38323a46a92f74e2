#include "cclip/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cclip/inference.hpp"

namespace cclip {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

RunConfig RunConfig::defaults(const std::string& preset_name) {
    RunConfig c;
    c.preset = preset_name;
    const TrainConfig t = preset_from_name(preset_name) == Preset::paper
                              ? TrainConfig::preset_paper()
                              : TrainConfig::preset_desk();
    c.learning_rate = t.learning_rate;
    c.batch_size = t.batch_size;
    c.epochs = t.epochs;
    return c;
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    ordered_json obj = ordered_json::parse(text, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
        fail("ParseError", "config is not a JSON object");
    }

    RunConfig c = defaults(obj.contains("preset") ? obj.at("preset").get<std::string>()
                                                  : std::string("desk"));
    try {
        for (const auto& [key, value] : obj.items()) {
            if (key == "manifest") c.manifest = value.get<std::string>();
            else if (key == "out_dir") c.out_dir = value.get<std::string>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "d_in") c.d_in = value.get<std::size_t>();
            else if (key == "hidden") c.hidden = value.get<std::size_t>();
            else if (key == "d_v") c.d_v = value.get<std::size_t>();
            else if (key == "d_t") c.d_t = value.get<std::size_t>();
            else if (key == "joint") c.joint = value.get<std::size_t>();
            else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
            else if (key == "image_mode") c.image_mode = value.get<std::string>();
            else if (key == "text_mode") c.text_mode = value.get<std::string>();
            else if (key == "preset") c.preset = value.get<std::string>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "epochs") c.epochs = value.get<std::size_t>();
            else if (key == "optimizer") c.optimizer = value.get<std::string>();
            else if (key == "train_ratio") c.train_ratio = value.get<double>();
            else if (key == "val_ratio") c.val_ratio = value.get<double>();
            else if (key == "test_ratio") c.test_ratio = value.get<double>();
            else if (key == "prompt_template") c.prompt_template = value.get<std::string>();
            else fail("UnknownConfigKey", "config key '" + key + "' is not recognized");
        }
    } catch (const ordered_json::exception& e) {
        fail("ParseError", std::string("bad config value: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "IoError", "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
    ordered_json j;
    j["manifest"] = manifest;
    j["out_dir"] = out_dir;
    j["seed"] = seed;
    j["d_in"] = d_in;
    j["hidden"] = hidden;
    j["d_v"] = d_v;
    j["d_t"] = d_t;
    j["joint"] = joint;
    j["vocab_size"] = vocab_size;
    j["image_mode"] = image_mode;
    j["text_mode"] = text_mode;
    j["preset"] = preset;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["optimizer"] = optimizer;
    j["train_ratio"] = train_ratio;
    j["val_ratio"] = val_ratio;
    j["test_ratio"] = test_ratio;
    j["prompt_template"] = prompt_template;
    return j.dump(2) + "\n";
}

ModelDims RunConfig::model_dims() const {
    ModelDims d;
    d.d_in = d_in;
    d.hidden = hidden;
    d.d_v = d_v;
    d.d_t = d_t;
    d.joint = joint;
    d.vocab = 0; // patched once the vocabulary is built
    return d;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.seed = seed;
    t.optimizer = optimizer_from_name(optimizer);
    t.preset = preset_from_name(preset);
    return t;
}

void RunConfig::validate() const {
    train_config().validate();
    require(joint >= 2, "BadConfig", "joint must be >= 2");
    require(vocab_size >= 2, "BadConfig", "vocab_size must be >= 2");
    require(d_t > 0 && d_v > 0 && d_in > 0, "BadConfig", "model dims must be positive");
    encoder_mode_from_name(image_mode);
    encoder_mode_from_name(text_mode);
    if (encoder_mode_from_name(image_mode) == EncoderMode::frozen) {
        require(d_in == d_v, "BadConfig", "frozen image mode requires d_in == d_v");
    }
    const double sum = train_ratio + val_ratio + test_ratio;
    require(train_ratio > 0 && val_ratio > 0 && test_ratio > 0 && std::abs(sum - 1.0) <= 1e-9,
            "BadRatios", "split ratios must be positive and sum to 1");
    PromptSet::make({"probe"}, prompt_template); // template sanity
}

namespace {

std::vector<std::string> sorted_unique_labels(const std::vector<PairRecord>& records) {
    std::set<std::string> labels;
    for (const auto& rec : records) {
        labels.insert(rec.label);
    }
    return {labels.begin(), labels.end()};
}

std::vector<PairRecord> filter_split(std::vector<PairRecord> records, const std::string& which) {
    if (which == "all") {
        return records;
    }
    const Split split = split_from_name(which);
    std::vector<PairRecord> out;
    for (auto& rec : records) {
        if (rec.split == split) {
            out.push_back(std::move(rec));
        }
    }
    return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IoError", "cannot write " + path.string());
    out << text;
    require(out.good(), "IoError", "failed writing " + path.string());
}

// --- caption ---

int cmd_caption(const std::string& manifest_in, const std::string& manifest_out,
                const std::string& captioner, bool overwrite) {
    const std::vector<PairRecord> records = load_manifest(manifest_in);

    bool pending = overwrite;
    for (const auto& rec : records) {
        pending = pending || rec.caption.empty();
    }
    if (!pending) {
        // Nothing to do: copy the input bytes so the output is identical.
        std::ifstream in(manifest_in, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        write_text_file(manifest_out, ss.str());
        std::cout << "captions unchanged (" << records.size() << " records)\n";
        return 0;
    }

    const auto updated = attach_captions(records, captioner, overwrite);
    save_manifest(updated, manifest_out);
    std::cout << "captioned " << updated.size() << " records -> " << manifest_out << "\n";
    return 0;
}

// --- train ---

int cmd_train(const RunConfig& config) {
    config.validate();
    require(!config.manifest.empty(), "BadConfig", "config needs a 'manifest' path");

    std::vector<PairRecord> records = load_manifest(config.manifest);
    require(!records.empty(), "InvalidArgument", "manifest has no records");
    split_records(records, config.ratios(), config.seed);

    fs::create_directories(config.out_dir);
    save_manifest(records, fs::path(config.out_dir) / "manifest.split.jsonl");

    const auto train_records = records_in_split(records, Split::train);
    const auto val_records = records_in_split(records, Split::val);
    require(!train_records.empty(), "InvalidArgument", "train split is empty");

    std::vector<std::string> train_captions;
    for (const auto& rec : train_records) {
        require(!rec.caption.empty(), "EmptyCaption",
                "record '" + rec.id + "' has no caption; run the caption command first");
        train_captions.push_back(rec.caption);
    }
    const Vocab vocab = Vocab::build(train_captions, config.vocab_size);

    ModelDims dims = config.model_dims();
    dims.vocab = vocab.size();
    AlignmentModel model =
        AlignmentModel::init(dims, vocab, config.seed, encoder_mode_from_name(config.image_mode),
                             encoder_mode_from_name(config.text_mode));

    FeatureStore store;
    const TrainConfig train_cfg = config.train_config();
    const TrainHistory history =
        fit(model, train_records, val_records, store, train_cfg,
            [&](std::size_t epoch, double train_loss, double val_loss) {
                std::cout << "epoch " << (epoch + 1) << "/" << train_cfg.epochs
                          << " train_loss=" << train_loss;
                if (std::isfinite(val_loss)) {
                    std::cout << " val_loss=" << val_loss;
                }
                std::cout << "\n";
            });

    const fs::path out_dir(config.out_dir);
    save_checkpoint(model, out_dir / "model.cclp");

    ordered_json hist;
    hist["epochs"] = history.train_loss.size();
    hist["train_loss"] = history.train_loss;
    hist["val_loss"] = ordered_json::array();
    for (const double v : history.val_loss) {
        if (std::isfinite(v)) {
            hist["val_loss"].push_back(v);
        } else {
            hist["val_loss"].push_back(nullptr);
        }
    }
    write_text_file(out_dir / "history.json", hist.dump(2) + "\n");

    // Wall times live in a sidecar so the primary outputs stay byte-stable.
    ordered_json timing;
    timing["epoch_seconds"] = history.epoch_seconds;
    double total = 0.0;
    for (const double s : history.epoch_seconds) {
        total += s;
    }
    timing["total_seconds"] = total;
    write_text_file(out_dir / "timing.json", timing.dump(2) + "\n");

    const double final_val = history.val_loss.empty() ? std::nan("") : history.val_loss.back();
    if (std::isfinite(final_val)) {
        std::cout << "final val loss: " << final_val << "\n";
    } else {
        std::cout << "final train loss: "
                  << (history.train_loss.empty() ? std::nan("") : history.train_loss.back())
                  << "\n";
    }
    std::cout << "checkpoint: " << (out_dir / "model.cclp").string() << "\n";
    return 0;
}

// --- eval ---

struct DatasetArg {
    std::string name;
    std::string path;
};

DatasetArg parse_name_eq_value(const std::string& arg, const char* what) {
    const auto pos = arg.find('=');
    require(pos != std::string::npos && pos > 0 && pos + 1 < arg.size(), "InvalidArgument",
            std::string(what) + " must look like NAME=VALUE, got '" + arg + "'");
    return {arg.substr(0, pos), arg.substr(pos + 1)};
}

std::vector<std::string> split_commas(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

int cmd_eval(const std::string& checkpoint, const std::vector<std::string>& data_args,
             const std::vector<std::string>& acc_args, const std::string& ood_csv,
             const std::string& template_text, const std::vector<std::string>& classes_arg,
             const std::string& split_filter, bool report_only, const std::string& out_dir) {
    const std::vector<std::string> ood_names = split_commas(ood_csv);

    std::vector<std::pair<std::string, double>> rows;
    if (report_only) {
        require(!acc_args.empty(), "InvalidArgument",
                "--report-only needs at least one --acc NAME=VALUE");
        for (const auto& arg : acc_args) {
            const auto [name, value] = parse_name_eq_value(arg, "--acc");
            try {
                rows.emplace_back(name, std::stod(value));
            } catch (const std::exception&) {
                fail("ParseError", "--acc value '" + value + "' is not a number");
            }
        }
    } else {
        require(!checkpoint.empty(), "InvalidArgument", "--checkpoint is required");
        require(!data_args.empty(), "InvalidArgument", "at least one --data NAME=MANIFEST");
        const AlignmentModel model = load_checkpoint(checkpoint);
        FeatureStore store;

        std::vector<std::pair<std::string, std::vector<PairRecord>>> datasets;
        std::set<std::string> labels(classes_arg.begin(), classes_arg.end());
        for (const auto& arg : data_args) {
            const auto [name, path] = parse_name_eq_value(arg, "--data");
            auto records = filter_split(load_manifest(path), split_filter);
            require(!records.empty(), "InvalidArgument",
                    "dataset '" + name + "' has no records in split '" + split_filter + "'");
            if (classes_arg.empty()) {
                for (const auto& rec : records) {
                    labels.insert(rec.label);
                }
            }
            datasets.emplace_back(name, std::move(records));
        }
        const PromptSet prompts =
            PromptSet::make({labels.begin(), labels.end()}, template_text);
        for (const auto& [name, records] : datasets) {
            rows.emplace_back(name, top1_accuracy(model, records, prompts, store));
        }
    }

    const EvalReport report = aggregate_report(rows, ood_names);
    std::cout << render_report_table(report);
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "report.json", report_to_json(report));
    return 0;
}

// --- retrieve ---

int cmd_retrieve(const std::string& checkpoint, const std::string& index_manifest,
                 const std::string& modality_name_arg, const std::string& query_text,
                 const std::string& query_image, std::size_t query_index, std::size_t k,
                 bool exclude_self, const std::string& template_text,
                 const std::string& split_filter, const std::string& out_dir) {
    require(k >= 1, "KTooLarge", "--k must be >= 1");
    require(query_text.empty() != query_image.empty(), "InvalidArgument",
            "pass exactly one of --query or --query-image");

    const AlignmentModel model = load_checkpoint(checkpoint);
    FeatureStore store;
    const auto records = filter_split(load_manifest(index_manifest), split_filter);
    require(!records.empty(), "InvalidArgument", "index manifest has no records");
    const RetrievalIndex index =
        build_index(model, records, modality_from_name(modality_name_arg), store);

    std::vector<RetrievalHit> hits;
    if (!query_text.empty()) {
        const PromptSet prompts = PromptSet::make(sorted_unique_labels(records), template_text);
        hits = retrieve_text(model, query_text, prompts, index, k);
    } else {
        PairRecord probe;
        probe.id = "(query)";
        probe.features = query_image;
        probe.index = query_index;
        const std::vector<double> row = store.feature_row(probe);
        std::string exclude;
        if (exclude_self) {
            for (const auto& rec : records) {
                if (rec.features == query_image && rec.index == query_index) {
                    exclude = rec.id;
                    break;
                }
            }
        }
        hits = retrieve_image(model, row, index, k, exclude);
    }

    ordered_json j = ordered_json::array();
    std::cout << "rank  cosine      id\n";
    for (std::size_t r = 0; r < hits.size(); ++r) {
        char cbuf[32];
        std::snprintf(cbuf, sizeof(cbuf), "%.6f", hits[r].cosine);
        std::printf("%-5zu %-11s %s\n", r + 1, cbuf, hits[r].id.c_str());
        j.push_back({{"rank", r + 1}, {"id", hits[r].id}, {"cosine", hits[r].cosine}});
    }
    fs::create_directories(out_dir);
    write_text_file(fs::path(out_dir) / "retrieval.json", j.dump(2) + "\n");
    return 0;
}

// --- export ---

int cmd_export(const std::string& checkpoint, const std::string& manifest,
               const std::string& out_path, const std::string& split_filter) {
    const AlignmentModel model = load_checkpoint(checkpoint);
    FeatureStore store;
    const auto records = filter_split(load_manifest(manifest), split_filter);
    export_embeddings(model, records, store, out_path);
    std::cout << "exported " << records.size() << " embeddings -> " << out_path << "\n";
    return 0;
}

} // namespace

int run_cli(std::vector<std::string> args) {
    CLI::App app{"dual-encoder contrastive alignment engine"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_dir_override;
    app.add_option("--config", config_path, "run configuration (flat JSON)");
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--out-dir", out_dir_override, "override the config output directory");

    // caption
    auto* caption = app.add_subcommand("caption", "attach captions via an external captioner");
    std::string cap_manifest, cap_out, cap_cmd;
    bool cap_overwrite = false;
    caption->add_option("--manifest", cap_manifest, "input manifest")->required();
    caption->add_option("--out", cap_out, "output manifest")->required();
    caption->add_option("--captioner", cap_cmd,
                        "shell command reading id\\tfeatures\\tindex lines, writing captions")
        ->required();
    caption->add_flag("--overwrite", cap_overwrite, "re-caption records that have captions");

    // train
    auto* train = app.add_subcommand("train", "split, fit, and checkpoint a model");
    bool print_defaults = false;
    train->add_flag("--print-defaults", print_defaults, "print the default config and exit");

    // eval
    auto* eval = app.add_subcommand("eval", "zero-shot top-1 accuracy report");
    std::string eval_checkpoint, eval_ood, eval_template = kDefaultPromptTemplate;
    std::string eval_split = "all";
    std::vector<std::string> eval_data, eval_acc, eval_classes;
    bool report_only = false;
    eval->add_option("--checkpoint", eval_checkpoint, "trained checkpoint");
    eval->add_option("--data", eval_data, "dataset as NAME=MANIFEST (repeatable)");
    eval->add_option("--acc", eval_acc, "precomputed accuracy as NAME=VALUE (repeatable)");
    eval->add_option("--ood", eval_ood, "comma-separated OOD dataset names");
    eval->add_option("--template", eval_template, "prompt template with one {CLS}");
    eval->add_option("--classes", eval_classes, "explicit class names (repeatable)");
    eval->add_option("--split", eval_split, "restrict to a split: all|train|val|test");
    eval->add_flag("--report-only", report_only, "aggregate --acc values without a model");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "top-k cosine retrieval");
    std::string ret_checkpoint, ret_index, ret_modality = "image";
    std::string ret_query, ret_query_image, ret_template = kDefaultPromptTemplate;
    std::string ret_split = "all";
    std::size_t ret_query_index = 0, ret_k = 5;
    bool ret_exclude_self = false;
    retrieve_cmd->add_option("--checkpoint", ret_checkpoint, "trained checkpoint")->required();
    retrieve_cmd->add_option("--index", ret_index, "manifest of records to index")->required();
    retrieve_cmd->add_option("--modality", ret_modality, "index modality: image|text");
    retrieve_cmd->add_option("--query", ret_query,
                             "text query; bare class names go through the template");
    retrieve_cmd->add_option("--query-image", ret_query_image, "fvecs file for an image query");
    retrieve_cmd->add_option("--query-index", ret_query_index, "record index in --query-image");
    retrieve_cmd->add_option("--k", ret_k, "number of results");
    retrieve_cmd->add_flag("--exclude-self", ret_exclude_self,
                           "drop the query's own record from image->image results");
    retrieve_cmd->add_option("--template", ret_template, "prompt template with one {CLS}");
    retrieve_cmd->add_option("--split", ret_split, "restrict to a split: all|train|val|test");

    // export
    auto* export_cmd = app.add_subcommand("export", "export joint-space embeddings as TSV");
    std::string exp_checkpoint, exp_manifest, exp_out;
    std::string exp_split = "all";
    export_cmd->add_option("--checkpoint", exp_checkpoint, "trained checkpoint")->required();
    export_cmd->add_option("--manifest", exp_manifest, "records to embed")->required();
    export_cmd->add_option("--out", exp_out, "output TSV path")->required();
    export_cmd->add_option("--split", exp_split, "restrict to a split: all|train|val|test");

    std::vector<const char*> argv;
    argv.push_back("cclip");
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());

        if (caption->parsed()) {
            return cmd_caption(cap_manifest, cap_out, cap_cmd, cap_overwrite);
        }
        if (train->parsed()) {
            if (print_defaults) {
                std::cout << RunConfig::defaults().to_json_text();
                return 0;
            }
            require(!config_path.empty(), "BadConfig", "train needs --config (or --print-defaults)");
            RunConfig config = RunConfig::load(config_path);
            if (seed_override) {
                config.seed = *seed_override;
            }
            if (out_dir_override) {
                config.out_dir = *out_dir_override;
            }
            return cmd_train(config);
        }
        if (eval->parsed()) {
            const std::string out_dir = out_dir_override.value_or("out");
            return cmd_eval(eval_checkpoint, eval_data, eval_acc, eval_ood, eval_template,
                            eval_classes, eval_split, report_only, out_dir);
        }
        if (retrieve_cmd->parsed()) {
            const std::string out_dir = out_dir_override.value_or("out");
            return cmd_retrieve(ret_checkpoint, ret_index, ret_modality, ret_query,
                                ret_query_image, ret_query_index, ret_k, ret_exclude_self,
                                ret_template, ret_split, out_dir);
        }
        if (export_cmd->parsed()) {
            return cmd_export(exp_checkpoint, exp_manifest, exp_out, exp_split);
        }
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << e.what() << "\n";
        return 1;
    }
}

} // namespace cclip
