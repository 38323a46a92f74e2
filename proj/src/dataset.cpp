#include "cclip/dataset.hpp"

#include "cclip/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include <csignal>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace cclip {

using ordered_json = nlohmann::ordered_json;

std::string split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "";
    }
    return "";
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    fail("ParseError", "unknown split name '" + name + "'");
}

// --- manifest ---

std::vector<PairRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), "IoError", "cannot open manifest " + path.string());

    std::vector<PairRecord> records;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        ordered_json obj = ordered_json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) {
            fail("ParseError", "line " + std::to_string(line_no) + " is not a JSON object");
        }
        auto field = [&](const char* key) -> const ordered_json& {
            auto it = obj.find(key);
            if (it == obj.end()) {
                fail("MissingField",
                     "line " + std::to_string(line_no) + " lacks key '" + key + "'");
            }
            return *it;
        };

        PairRecord rec;
        try {
            rec.id = field("id").get<std::string>();
            rec.features = field("features").get<std::string>();
            const auto& idx = field("index");
            if (!idx.is_number_integer() || idx.get<std::int64_t>() < 0) {
                fail("ParseError",
                     "line " + std::to_string(line_no) + " has a non-integer index");
            }
            rec.index = idx.get<std::size_t>();
            rec.label = field("label").get<std::string>();
            if (auto it = obj.find("caption"); it != obj.end() && !it->is_null()) {
                rec.caption = it->get<std::string>();
            }
            if (auto it = obj.find("split"); it != obj.end() && !it->is_null()) {
                const auto name = it->get<std::string>();
                if (!name.empty()) {
                    rec.split = split_from_name(name);
                }
            }
        } catch (const ordered_json::exception& e) {
            fail("ParseError", "line " + std::to_string(line_no) + ": " + e.what());
        }

        if (!seen.emplace(rec.id, line_no).second) {
            fail("DuplicateId", "id '" + rec.id + "' repeats at line " + std::to_string(line_no));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_manifest(const std::vector<PairRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IoError", "cannot write manifest " + path.string());
    for (const auto& rec : records) {
        ordered_json obj;
        obj["id"] = rec.id;
        obj["features"] = rec.features;
        obj["index"] = rec.index;
        if (!rec.caption.empty()) {
            obj["caption"] = rec.caption;
        }
        obj["label"] = rec.label;
        if (rec.split != Split::unassigned) {
            obj["split"] = split_name(rec.split);
        }
        out << obj.dump() << '\n';
    }
    require(out.good(), "IoError", "failed writing manifest " + path.string());
}

// --- fvecs ---

Matrix read_fvecs(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "IoError", "cannot open fvecs file " + path.string());

    std::vector<float> values;
    std::size_t dim = 0;
    std::size_t n = 0;
    std::size_t offset = 0;
    for (;;) {
        unsigned char dim_bytes[4];
        in.read(reinterpret_cast<char*>(dim_bytes), 4);
        if (in.gcount() == 0) {
            break; // clean end of file
        }
        if (in.gcount() != 4) {
            fail("CorruptRecord", "truncated dimension at byte offset " + std::to_string(offset));
        }
        const std::int32_t d = static_cast<std::int32_t>(
            std::uint32_t(dim_bytes[0]) | (std::uint32_t(dim_bytes[1]) << 8) |
            (std::uint32_t(dim_bytes[2]) << 16) | (std::uint32_t(dim_bytes[3]) << 24));
        if (d <= 0) {
            fail("CorruptRecord",
                 "non-positive dimension at byte offset " + std::to_string(offset));
        }
        if (n == 0) {
            dim = static_cast<std::size_t>(d);
        } else if (static_cast<std::size_t>(d) != dim) {
            fail("DimMismatch", "record " + std::to_string(n) + " has dimension " +
                                    std::to_string(d) + ", expected " + std::to_string(dim));
        }

        std::vector<unsigned char> payload(static_cast<std::size_t>(d) * 4);
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
        if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
            fail("CorruptRecord", "truncated record at byte offset " + std::to_string(offset));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            std::uint32_t bits = std::uint32_t(payload[4 * j]) |
                                 (std::uint32_t(payload[4 * j + 1]) << 8) |
                                 (std::uint32_t(payload[4 * j + 2]) << 16) |
                                 (std::uint32_t(payload[4 * j + 3]) << 24);
            float f;
            std::memcpy(&f, &bits, 4);
            values.push_back(f);
        }
        ++n;
        offset += 4 + payload.size();
    }

    Matrix out(n, dim);
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.data[i] = static_cast<double>(values[i]);
    }
    return out;
}

void write_fvecs(const std::filesystem::path& path, const Matrix& vectors) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IoError", "cannot write fvecs file " + path.string());

    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    };

    for (std::size_t i = 0; i < vectors.rows; ++i) {
        put_u32(static_cast<std::uint32_t>(vectors.cols));
        for (std::size_t j = 0; j < vectors.cols; ++j) {
            const float f = static_cast<float>(vectors(i, j));
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(bits);
        }
    }
    require(out.good(), "IoError", "failed writing fvecs file " + path.string());
}

// --- vocabulary / tokenization ---

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> words;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; };

    while (i < n) {
        while (i < n && is_space(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < n && !is_space(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t end = i;
        while (start < end && is_punct(static_cast<unsigned char>(text[start]))) {
            ++start;
        }
        while (end > start && is_punct(static_cast<unsigned char>(text[end - 1]))) {
            --end;
        }
        if (start == end) {
            continue;
        }
        std::string word = text.substr(start, end - start);
        for (char& c : word) {
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        words.push_back(std::move(word));
    }
    return words;
}

Vocab Vocab::build(const std::vector<std::string>& captions, std::size_t max_size) {
    require(max_size >= 2, "InvalidArgument", "vocab max_size must cover PAD and UNK");
    std::map<std::string, std::size_t> counts; // ordered map keeps ties deterministic
    for (const auto& caption : captions) {
        for (auto& word : tokenize_words(caption)) {
            ++counts[word];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });

    std::vector<std::string> tokens;
    const std::size_t budget = max_size - 2;
    for (const auto& [word, count] : ranked) {
        if (tokens.size() == budget) {
            break;
        }
        tokens.push_back(word);
    }
    return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.index_.reserve(v.tokens_.size());
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        const bool inserted =
            v.index_.emplace(v.tokens_[i], static_cast<std::int32_t>(i + 2)).second;
        require(inserted, "DuplicateId", "duplicate vocab token '" + v.tokens_[i] + "'");
    }
    return v;
}

std::int32_t Vocab::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<std::int32_t> tokenize(const std::string& caption, const Vocab& vocab) {
    std::vector<std::int32_t> ids;
    for (const auto& word : tokenize_words(caption)) {
        if (ids.size() == kMaxTokens) {
            break;
        }
        ids.push_back(vocab.id_of(word));
    }
    return ids;
}

// --- splits ---

void split_records(std::vector<PairRecord>& records, const SplitRatios& ratios,
                   std::uint64_t seed) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0) ||
        std::abs(sum - 1.0) > 1e-9) {
        fail("BadRatios", "split ratios must be positive and sum to 1");
    }

    const std::size_t n = records.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Pcg64 rng(seed, kStreamSplit);
    shuffle(order, rng);

    const auto n_train_floor = static_cast<std::size_t>(
        std::floor(ratios.train * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n)));
    const std::size_t n_train = n - n_val - n_test; // floor + remainder

    require(n_train >= n_train_floor, "BadRatios", "split counts overflowed");
    for (std::size_t pos = 0; pos < n; ++pos) {
        Split s = Split::train;
        if (pos >= n_train + n_val) {
            s = Split::test;
        } else if (pos >= n_train) {
            s = Split::val;
        }
        records[order[pos]].split = s;
    }
}

std::vector<PairRecord> records_in_split(const std::vector<PairRecord>& records, Split split) {
    std::vector<PairRecord> out;
    for (const auto& rec : records) {
        if (rec.split == split) {
            out.push_back(rec);
        }
    }
    return out;
}

// --- feature store / batches ---

const Matrix& FeatureStore::features(const std::string& path) {
    auto it = cache_.find(path);
    if (it == cache_.end()) {
        it = cache_.emplace(path, read_fvecs(path)).first;
    }
    return it->second;
}

void FeatureStore::put(std::string key, Matrix m) { cache_[std::move(key)] = std::move(m); }

std::vector<double> FeatureStore::feature_row(const PairRecord& record) {
    const Matrix& all = features(record.features);
    if (record.index >= all.rows) {
        fail("IndexOutOfRange", "record '" + record.id + "' references row " +
                                    std::to_string(record.index) + " of " +
                                    std::to_string(all.rows) + " in " + record.features);
    }
    auto row = all.row(record.index);
    return {row.begin(), row.end()};
}

std::size_t FeatureStore::feature_dim(const PairRecord& record) {
    return features(record.features).cols;
}

std::vector<std::vector<std::size_t>> ordered_batch_indices(std::size_t n,
                                                            std::size_t batch_size) {
    require(batch_size >= 2, "BatchTooSmall", "batch_size must be >= 2");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t len = std::min(batch_size, n - start);
        if (len < 2) {
            break; // drop a trailing singleton
        }
        std::vector<std::size_t> chunk(len);
        std::iota(chunk.begin(), chunk.end(), start);
        out.push_back(std::move(chunk));
    }
    return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
    require(batch_size >= 2, "BatchTooSmall", "batch_size must be >= 2");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Pcg64 rng(seed, kStreamBatchBase + epoch);
    shuffle(order, rng);

    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t len = std::min(batch_size, n - start);
        if (len < 2) {
            break;
        }
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + len));
    }
    return out;
}

Batch make_batch(const std::vector<PairRecord>& records, std::span<const std::size_t> indices,
                 FeatureStore& store, const Vocab& vocab) {
    require(indices.size() >= 2, "BatchTooSmall", "a batch needs at least 2 records");

    Batch batch;
    std::size_t dim = 0;
    for (std::size_t pos = 0; pos < indices.size(); ++pos) {
        const PairRecord& rec = records.at(indices[pos]);
        require(!rec.caption.empty(), "EmptyCaption",
                "record '" + rec.id + "' has no caption");
        const std::vector<double> row = store.feature_row(rec);
        if (pos == 0) {
            dim = row.size();
            batch.image_inputs = Matrix(indices.size(), dim);
        } else if (row.size() != dim) {
            fail("DimMismatch", "record '" + rec.id + "' has feature dimension " +
                                    std::to_string(row.size()) + ", expected " +
                                    std::to_string(dim));
        }
        std::copy(row.begin(), row.end(), batch.image_inputs.row(pos).begin());
        batch.token_ids.push_back(tokenize(rec.caption, vocab));
        batch.match_targets.push_back(pos);
    }
    return batch;
}

std::vector<Batch> batches(const std::vector<PairRecord>& records, FeatureStore& store,
                           const Vocab& vocab, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
    std::vector<Batch> out;
    for (const auto& chunk : batch_indices(records.size(), batch_size, seed, epoch)) {
        out.push_back(make_batch(records, chunk, store, vocab));
    }
    return out;
}

// --- captioner subprocess ---

namespace {

struct PipeResult {
    int exit_code = -1;
    std::vector<std::string> lines;
};

// Runs `command` via the shell with `input` on stdin; collects stdout lines.
// stdin is fed from a helper thread so large outputs cannot deadlock.
PipeResult run_line_filter(const std::string& command, const std::string& input) {
    int in_pipe[2];
    int out_pipe[2];
    require(pipe(in_pipe) == 0 && pipe(out_pipe) == 0, "IoError", "pipe() failed");

    const pid_t pid = fork();
    require(pid >= 0, "IoError", "fork() failed");

    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    close(in_pipe[0]);
    close(out_pipe[1]);

    std::thread writer([fd = in_pipe[1], &input] {
        // Block SIGPIPE in this thread; a child that never reads stdin then
        // surfaces as EPIPE instead of killing the process.
        sigset_t pipe_set;
        sigemptyset(&pipe_set);
        sigaddset(&pipe_set, SIGPIPE);
        pthread_sigmask(SIG_BLOCK, &pipe_set, nullptr);

        std::size_t written = 0;
        while (written < input.size()) {
            const ssize_t n = write(fd, input.data() + written, input.size() - written);
            if (n <= 0) {
                break; // child closed its stdin early
            }
            written += static_cast<std::size_t>(n);
        }
        close(fd);
        sigset_t pending;
        sigpending(&pending);
        if (sigismember(&pending, SIGPIPE) == 1) {
            int sig = 0;
            sigwait(&pipe_set, &sig); // consume it
        }
    });

    std::string output;
    char buf[4096];
    for (;;) {
        const ssize_t n = read(out_pipe[0], buf, sizeof(buf));
        if (n <= 0) {
            break;
        }
        output.append(buf, static_cast<std::size_t>(n));
    }
    close(out_pipe[0]);
    writer.join();

    int status = 0;
    waitpid(pid, &status, 0);

    PipeResult result;
    if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.exit_code = 128 + WTERMSIG(status);
    }

    std::istringstream stream(output);
    std::string line;
    while (std::getline(stream, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        result.lines.push_back(line);
    }
    return result;
}

} // namespace

std::vector<PairRecord> attach_captions(std::vector<PairRecord> records,
                                        const std::string& captioner_command,
                                        bool overwrite) {
    std::vector<std::size_t> pending;
    std::string input;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].caption.empty() || overwrite) {
            pending.push_back(i);
            input += records[i].id;
            input += '\t';
            input += records[i].features;
            input += '\t';
            input += std::to_string(records[i].index);
            input += '\n';
        }
    }
    if (pending.empty()) {
        return records;
    }

    const PipeResult result = run_line_filter(captioner_command, input);
    if (result.exit_code != 0) {
        fail("CaptionerFailed", "captioner exited with status " +
                                    std::to_string(result.exit_code));
    }
    if (result.lines.size() != pending.size()) {
        fail("CaptionerFailed", "captioner emitted " + std::to_string(result.lines.size()) +
                                    " lines for " + std::to_string(pending.size()) + " inputs");
    }
    for (std::size_t k = 0; k < pending.size(); ++k) {
        if (result.lines[k].empty()) {
            fail("EmptyCaption", "captioner emitted an empty caption for '" +
                                     records[pending[k]].id + "'");
        }
        records[pending[k]].caption = result.lines[k];
    }
    return records;
}

} // namespace cclip
