#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cclip/dataset.hpp"
#include "cclip/encoders.hpp"
#include "cclip/numcore.hpp"

namespace cclip {

struct ModelDims {
    std::size_t d_in = 3072; // 32x32x3 flattened pixels
    std::size_t hidden = 256;
    std::size_t d_v = 768;
    std::size_t d_t = 512;
    std::size_t joint = 512; // projection output dimension n
    std::size_t vocab = Vocab::kDefaultMaxSize;

    bool operator==(const ModelDims&) const = default;
};

// The full trainable state: encoders, projection matrices, log-temperature,
// plus the vocabulary the text side was built against.
struct AlignmentModel {
    ImageEncoderParams image;
    TextEncoderParams text;
    Matrix wv;  // d_v x joint
    Matrix wt;  // d_t x joint
    Matrix tau; // 1x1 log-scale temperature
    Vocab vocab;

    double logit_scale() const { return std::exp(tau(0, 0)); }
    ModelDims dims() const;

    // (id, parameter) pairs the optimizer may update; frozen encoders
    // contribute nothing.
    std::vector<std::pair<std::string, Matrix*>> trainable();

    static AlignmentModel init(const ModelDims& dims, Vocab vocab, std::uint64_t seed,
                               EncoderMode image_mode = EncoderMode::toy,
                               EncoderMode text_mode = EncoderMode::toy);
};

// exp(tau) stays inside this range after every optimizer step and on load.
inline constexpr double kMinLogitScale = 1e-3;
inline constexpr double kMaxLogitScale = 100.0;

void clamp_tau(Matrix& tau);

enum class OptimizerKind { adam, sgd };
enum class Preset { paper, desk };

std::string optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);
std::string preset_name(Preset p);
Preset preset_from_name(const std::string& name);

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t batch_size = 32;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    Preset preset = Preset::desk;

    // paper: the published fine-tuning recipe; desk: from-scratch toy training.
    static TrainConfig preset_paper();
    static TrainConfig preset_desk();

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;     // NaN entries when no validation split
    std::vector<double> epoch_seconds; // excluded from determinism guarantees
};

// Forward pass: joint projection + row normalization for both modalities.
// Every returned row has unit norm.
std::pair<Matrix, Matrix> joint_embed(const AlignmentModel& model, const Batch& batch);

// logits[i][j] = exp(tau) * dot(Fv[i], Ft[j]) for unit-norm rows.
Matrix similarity_logits(const Matrix& fv_norm, const Matrix& ft_norm, double tau);

// 0.5 * (CE over rows + CE over columns) with diagonal targets.
double symmetric_loss(const Matrix& logits);

// Intermediates cached by the forward pass for the analytic backward.
struct PipelineCache {
    ImageForward image_fwd;
    Matrix text_feat; // B x d_t
    Matrix pv, pt;    // B x joint, pre-normalization
    Matrix fv, ft;    // B x joint, unit rows
    Matrix logits;    // B x B
    double loss = 0.0;
};

double forward_loss(const AlignmentModel& model, const Batch& batch, PipelineCache* cache);

// Analytic gradients for every trainable parameter (Wv, Wt, tau, toy encoders).
GradTape backward_loss(const AlignmentModel& model, const Batch& batch,
                       const PipelineCache& cache);

// Adam (b1=0.9, b2=0.999, eps=1e-8) or plain SGD over tape gradients.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);

    void step(AlignmentModel& model, const GradTape& tape);
    std::size_t steps_taken() const { return step_count_; }

private:
    struct Moments {
        Matrix m;
        Matrix v;
    };

    OptimizerKind kind_;
    double lr_;
    std::size_t step_count_ = 0;
    std::map<std::string, Moments> moments_;
};

// One forward/backward/update; enforces the tau clamp and aborts on a
// non-finite loss with diagnostics.
double train_step(AlignmentModel& model, const Batch& batch, Optimizer& optimizer,
                  const TrainConfig& config);

// Called after each epoch with (epoch index, mean train loss, val loss).
using EpochCallback = std::function<void(std::size_t, double, double)>;

// Full training loop: per-epoch shuffled batches, gradient-free validation
// loss, deterministic for a fixed seed.
TrainHistory fit(AlignmentModel& model, const std::vector<PairRecord>& train_records,
                 const std::vector<PairRecord>& val_records, FeatureStore& store,
                 const TrainConfig& config, const EpochCallback& on_epoch = {});

// Checkpoint file: magic "CCLP", u32 LE version (=1), u32 LE JSON header
// length, JSON header listing tensors as {name, rows, cols, byte_offset}
// (offsets relative to the payload start) plus dims/modes/vocab, then
// concatenated float32 LE row-major payloads. tau is stored as a 1x1 tensor.
void save_checkpoint(const AlignmentModel& model, const std::filesystem::path& path);
AlignmentModel load_checkpoint(const std::filesystem::path& path);
// Validates the stored dims against an expected configuration (ShapeMismatch).
AlignmentModel load_checkpoint(const std::filesystem::path& path, const ModelDims& expected);

} // namespace cclip
