#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cclip/dataset.hpp"

namespace cclip {

// Demo/benchmark dataset: per-class Gaussian blobs with templated captions.
// Feature vectors are class centroid + N(0, sigma^2) noise.
struct SyntheticSpec {
    std::size_t samples_per_class = 100;
    std::size_t feature_dim = 16;
    double noise_sigma = 0.3;
    std::uint64_t seed = 0;
    std::string template_text = "A realistic photo of a {CLS}";
    std::vector<std::string> classes = {"Planet", "Asteroid", "Nebula",  "Comet",
                                        "Star",   "Black Hole", "Galaxy", "Constellation"};
};

struct SyntheticDataset {
    std::vector<PairRecord> records; // features key "synthetic.fvecs"
    Matrix features;                 // one row per record
    std::vector<std::string> classes;
};

SyntheticDataset make_synthetic(const SyntheticSpec& spec);

// Writes features.fvecs + manifest.jsonl under dir; returns the manifest path.
std::filesystem::path write_synthetic(const SyntheticDataset& data,
                                      const std::filesystem::path& dir);

} // namespace cclip
