#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cclip/numcore.hpp"

namespace cclip {

enum class Split { unassigned, train, val, test };

std::string split_name(Split s);
Split split_from_name(const std::string& name); // ParseError on unknown names

// One image-feature/caption/label sample. Features live in an fvecs file and
// are addressed by (path, record index).
struct PairRecord {
    std::string id;
    std::string features; // fvecs path
    std::size_t index = 0;
    std::string caption; // empty until captioning
    std::string label;
    Split split = Split::unassigned;

    bool operator==(const PairRecord&) const = default;
};

// Manifest: JSON Lines, one object per line with keys
// {"id": str, "features": str, "index": int, "caption": str?, "label": str, "split": str?}.
// Unknown keys are ignored on load; save emits the keys above in that order.
std::vector<PairRecord> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<PairRecord>& records, const std::filesystem::path& path);

// fvecs: per record [int32 LE dim][dim x float32 LE]. All records in one file
// share a dimension. Values round-trip bit-identically at float32 precision.
Matrix read_fvecs(const std::filesystem::path& path);
void write_fvecs(const std::filesystem::path& path, const Matrix& vectors);

// Token vocabulary. Id 0 is PAD, id 1 is UNK; real tokens start at 2 and are
// assigned by descending train-split frequency (ties lexicographic).
class Vocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static constexpr std::size_t kDefaultMaxSize = 4096;

    static Vocab build(const std::vector<std::string>& captions,
                       std::size_t max_size = kDefaultMaxSize);
    static Vocab from_tokens(std::vector<std::string> tokens); // ids 2.. in order

    std::int32_t id_of(const std::string& token) const; // kUnk when absent
    std::size_t size() const { return tokens_.size() + 2; }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

inline constexpr std::size_t kMaxTokens = 77;

// Lowercases, splits on whitespace, and strips leading/trailing ASCII
// punctuation from each word; punctuation inside a word is kept, so an
// unseen hyphenated word maps to a single UNK.
std::vector<std::string> tokenize_words(const std::string& text);

// Token ids for a caption, truncated at kMaxTokens. Never padded; pooling
// uses the true length.
std::vector<std::int32_t> tokenize(const std::string& caption, const Vocab& vocab);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

// Seeded Fisher-Yates shuffle (PCG64, kStreamSplit), then contiguous
// train/val/test blocks by floor counts with the remainder going to train.
// All three ratios must be positive and sum to 1 +/- 1e-9.
void split_records(std::vector<PairRecord>& records, const SplitRatios& ratios,
                   std::uint64_t seed);

std::vector<PairRecord> records_in_split(const std::vector<PairRecord>& records, Split split);

// B paired image/text inputs with diagonal match targets.
struct Batch {
    Matrix image_inputs; // B x d_in
    std::vector<std::vector<std::int32_t>> token_ids;
    std::vector<std::size_t> match_targets; // always 0..B-1

    std::size_t size() const { return match_targets.size(); }
};

// Caches fvecs files by path; tests and the synthetic generator can preload
// in-memory matrices under invented keys.
class FeatureStore {
public:
    const Matrix& features(const std::string& path);
    void put(std::string key, Matrix m);
    std::vector<double> feature_row(const PairRecord& record);
    std::size_t feature_dim(const PairRecord& record);

private:
    std::map<std::string, Matrix> cache_;
};

// Shuffled index chunks for one epoch (PCG64 stream kStreamBatchBase + epoch).
// A trailing chunk of size < 2 is dropped; sizes >= 2 are kept as short batches.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

// Same chunking without the shuffle (validation passes).
std::vector<std::vector<std::size_t>> ordered_batch_indices(std::size_t n,
                                                            std::size_t batch_size);

Batch make_batch(const std::vector<PairRecord>& records, std::span<const std::size_t> indices,
                 FeatureStore& store, const Vocab& vocab);

std::vector<Batch> batches(const std::vector<PairRecord>& records, FeatureStore& store,
                           const Vocab& vocab, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch);

// Runs `captioner_command` through the shell, feeding one line per record
// needing a caption ("id<TAB>features<TAB>index") and reading one caption
// line back per input line, in order. Exit status must be 0.
// Already-captioned records are untouched unless overwrite is set.
std::vector<PairRecord> attach_captions(std::vector<PairRecord> records,
                                        const std::string& captioner_command,
                                        bool overwrite = false);

} // namespace cclip
