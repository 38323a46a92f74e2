#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cclip/alignment.hpp"
#include "cclip/dataset.hpp"

namespace cclip {

// Flat JSON run configuration. Unknown keys are rejected; `train
// --print-defaults` emits every key with its default so a config file can be
// kept as a complete reproducibility artifact.
struct RunConfig {
    std::string manifest;
    std::string out_dir = "out";
    std::uint64_t seed = 0;

    std::size_t d_in = 3072;
    std::size_t hidden = 256;
    std::size_t d_v = 768;
    std::size_t d_t = 512;
    std::size_t joint = 512;
    std::size_t vocab_size = 4096;
    std::string image_mode = "toy";
    std::string text_mode = "toy";

    std::string preset = "desk";
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;
    std::string optimizer = "adam";

    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;

    std::string prompt_template = "A realistic photo of a {CLS}";

    static RunConfig defaults(const std::string& preset_name = "desk");
    static RunConfig from_json_text(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string to_json_text() const;

    ModelDims model_dims() const; // vocab filled in after the vocabulary is built
    TrainConfig train_config() const;
    SplitRatios ratios() const { return {train_ratio, val_ratio, test_ratio}; }
    void validate() const;
};

// Full command-line entry point (subcommands: caption, train, eval, retrieve,
// export). Returns the process exit code; all errors print a single
// "error: <Code>: <message>" line on stderr.
int run_cli(std::vector<std::string> args);

} // namespace cclip
