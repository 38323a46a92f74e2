#include "cclip/alignment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace cclip {

using ordered_json = nlohmann::ordered_json;

ModelDims AlignmentModel::dims() const {
    ModelDims d;
    d.d_in = image.d_in;
    d.hidden = image.hidden;
    d.d_v = image.d_out;
    d.d_t = text.d_out();
    d.joint = wv.cols;
    d.vocab = text.vocab_size();
    return d;
}

std::vector<std::pair<std::string, Matrix*>> AlignmentModel::trainable() {
    std::vector<std::pair<std::string, Matrix*>> params;
    if (image.mode == EncoderMode::toy) {
        params.emplace_back("image.W1", &image.w1);
        params.emplace_back("image.b1", &image.b1);
        params.emplace_back("image.W2", &image.w2);
        params.emplace_back("image.b2", &image.b2);
    }
    if (text.mode == EncoderMode::toy) {
        params.emplace_back("text.E", &text.embedding);
    }
    params.emplace_back("Wv", &wv);
    params.emplace_back("Wt", &wt);
    params.emplace_back("tau", &tau);
    return params;
}

AlignmentModel AlignmentModel::init(const ModelDims& dims, Vocab vocab, std::uint64_t seed,
                                    EncoderMode image_mode, EncoderMode text_mode) {
    require(dims.joint >= 2, "InvalidArgument", "joint dimension must be >= 2");
    require(vocab.size() == dims.vocab || dims.vocab == 0, "ShapeMismatch",
            "vocab size " + std::to_string(vocab.size()) + " differs from dims.vocab " +
                std::to_string(dims.vocab));

    // Parameter draw order is fixed (W1, b1, W2, b2, E, Wv, Wt) so seeded
    // runs reproduce bit-for-bit.
    Pcg64 rng(seed, kStreamInit);
    AlignmentModel model;
    if (image_mode == EncoderMode::toy) {
        model.image = ImageEncoderParams::make_toy(dims.d_in, dims.hidden, dims.d_v, rng);
    } else {
        require(dims.d_in == dims.d_v, "DimMismatch",
                "frozen image mode requires d_in == d_v");
        model.image = ImageEncoderParams::make_frozen(dims.d_in);
    }
    model.text = TextEncoderParams::make(vocab.size(), dims.d_t, rng, text_mode);

    const double wv_sigma = 1.0 / std::sqrt(static_cast<double>(dims.d_v));
    model.wv = Matrix(dims.d_v, dims.joint);
    for (double& v : model.wv.data) {
        v = wv_sigma * rng.next_normal();
    }
    const double wt_sigma = 1.0 / std::sqrt(static_cast<double>(dims.d_t));
    model.wt = Matrix(dims.d_t, dims.joint);
    for (double& v : model.wt.data) {
        v = wt_sigma * rng.next_normal();
    }
    model.tau = Matrix(1, 1, 1.0);
    model.vocab = std::move(vocab);
    return model;
}

void clamp_tau(Matrix& tau) {
    const double lo = std::log(kMinLogitScale);
    const double hi = std::log(kMaxLogitScale);
    tau(0, 0) = std::clamp(tau(0, 0), lo, hi);
}

std::string optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "sgd") return OptimizerKind::sgd;
    fail("ParseError", "unknown optimizer '" + name + "'");
}

std::string preset_name(Preset p) { return p == Preset::paper ? "paper" : "desk"; }

Preset preset_from_name(const std::string& name) {
    if (name == "paper") return Preset::paper;
    if (name == "desk") return Preset::desk;
    fail("ParseError", "unknown preset '" + name + "'");
}

TrainConfig TrainConfig::preset_paper() {
    TrainConfig c;
    c.learning_rate = 2e-5;
    c.batch_size = 32;
    c.epochs = 10;
    c.preset = Preset::paper;
    return c;
}

TrainConfig TrainConfig::preset_desk() {
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.batch_size = 32;
    c.epochs = 200;
    c.preset = Preset::desk;
    return c;
}

void TrainConfig::validate() const {
    require(learning_rate > 0.0, "BadConfig", "learning_rate must be > 0");
    require(epochs >= 1, "BadConfig", "epochs must be >= 1");
    require(batch_size >= 2, "BadConfig", "batch_size must be >= 2");
}

std::pair<Matrix, Matrix> joint_embed(const AlignmentModel& model, const Batch& batch) {
    PipelineCache cache;
    forward_loss(model, batch, &cache);
    return {cache.fv, cache.ft};
}

Matrix similarity_logits(const Matrix& fv_norm, const Matrix& ft_norm, double tau) {
    require(fv_norm.cols == ft_norm.cols, "DimMismatch",
            "embedding dimensions differ between modalities");
    const double s = std::exp(tau);
    Matrix logits(fv_norm.rows, ft_norm.rows);
    for (std::size_t i = 0; i < fv_norm.rows; ++i) {
        for (std::size_t j = 0; j < ft_norm.rows; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < fv_norm.cols; ++k) {
                dot += fv_norm(i, k) * ft_norm(j, k);
            }
            logits(i, j) = s * dot;
        }
    }
    return logits;
}

double symmetric_loss(const Matrix& logits) {
    require(logits.rows == logits.cols && logits.rows >= 2, "InvalidArgument",
            "symmetric loss needs a square matrix with B >= 2");
    std::vector<std::size_t> diag(logits.rows);
    std::iota(diag.begin(), diag.end(), 0);
    const double image_axis = cross_entropy_rows(logits, diag);
    const double text_axis = cross_entropy_rows(transpose(logits), diag);
    return 0.5 * (image_axis + text_axis);
}

double forward_loss(const AlignmentModel& model, const Batch& batch, PipelineCache* cache) {
    require(batch.size() >= 2, "BatchTooSmall", "B >= 2 required for the pairwise loss");

    PipelineCache local;
    PipelineCache& c = cache != nullptr ? *cache : local;

    c.image_fwd = encode_image(model.image, batch.image_inputs);
    c.text_feat = encode_text(model.text, batch.token_ids);
    c.pv = matmul(c.image_fwd.out, model.wv);
    c.pt = matmul(c.text_feat, model.wt);
    c.fv = l2_normalize_rows(c.pv);
    c.ft = l2_normalize_rows(c.pt);
    c.logits = similarity_logits(c.fv, c.ft, model.tau(0, 0));
    c.loss = symmetric_loss(c.logits);
    return c.loss;
}

GradTape backward_loss(const AlignmentModel& model, const Batch& batch,
                       const PipelineCache& cache) {
    const std::size_t b = batch.size();
    std::vector<std::size_t> diag(b);
    std::iota(diag.begin(), diag.end(), 0);

    // d loss / d logits = 0.5 * ((P - I)/B + (Q - I)^T/B) with P = softmax over
    // rows, Q = softmax over rows of the transpose.
    const Matrix g_rows = cross_entropy_rows_backward(cache.logits, diag);
    const Matrix g_cols = transpose(cross_entropy_rows_backward(transpose(cache.logits), diag));
    const Matrix g_logits = scale(add(g_rows, g_cols), 0.5);

    GradTape tape;

    // logits = exp(tau) * Fv Ft^T, so d loss / d tau = sum(G o logits).
    tape.add("tau", Matrix(1, 1, sum_all(hadamard(g_logits, cache.logits))));

    const double s = std::exp(model.tau(0, 0));
    const Matrix d_fv = scale(matmul(g_logits, cache.ft), s);
    const Matrix d_ft = scale(matmul(transpose(g_logits), cache.fv), s);

    const Matrix d_pv = l2_normalize_rows_backward(cache.pv, d_fv);
    const Matrix d_pt = l2_normalize_rows_backward(cache.pt, d_ft);

    Matrix d_image_out;
    Matrix d_wv;
    matmul_backward(cache.image_fwd.out, model.wv, d_pv, &d_image_out, &d_wv);
    tape.add("Wv", std::move(d_wv));

    Matrix d_text_feat;
    Matrix d_wt;
    matmul_backward(cache.text_feat, model.wt, d_pt, &d_text_feat, &d_wt);
    tape.add("Wt", std::move(d_wt));

    encode_image_backward(model.image, batch.image_inputs, cache.image_fwd, d_image_out, tape);
    encode_text_backward(model.text, batch.token_ids, d_text_feat, tape);
    return tape;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate)
    : kind_(kind), lr_(learning_rate) {}

void Optimizer::step(AlignmentModel& model, const GradTape& tape) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;

    ++step_count_;
    for (auto& [id, param] : model.trainable()) {
        const Matrix* grad = tape.find(id);
        if (grad == nullptr) {
            continue;
        }
        require(grad->same_shape(*param), "ShapeMismatch",
                "gradient shape differs from parameter " + id);

        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < param->data.size(); ++i) {
                param->data[i] -= lr_ * grad->data[i];
            }
        } else {
            auto [it, fresh] = moments_.try_emplace(id);
            if (fresh) {
                it->second.m = Matrix(param->rows, param->cols);
                it->second.v = Matrix(param->rows, param->cols);
            }
            Moments& mom = it->second;
            const double t = static_cast<double>(step_count_);
            const double bc1 = 1.0 - std::pow(kBeta1, t);
            const double bc2 = 1.0 - std::pow(kBeta2, t);
            for (std::size_t i = 0; i < param->data.size(); ++i) {
                const double g = grad->data[i];
                mom.m.data[i] = kBeta1 * mom.m.data[i] + (1.0 - kBeta1) * g;
                mom.v.data[i] = kBeta2 * mom.v.data[i] + (1.0 - kBeta2) * g * g;
                const double mhat = mom.m.data[i] / bc1;
                const double vhat = mom.v.data[i] / bc2;
                param->data[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
            }
        }
    }
    clamp_tau(model.tau);
}

double train_step(AlignmentModel& model, const Batch& batch, Optimizer& optimizer,
                  const TrainConfig& config) {
    (void)config;
    PipelineCache cache;
    const double loss = forward_loss(model, batch, &cache);
    if (!std::isfinite(loss)) {
        fail("NonFiniteLoss", "loss became " + std::to_string(loss) + " at step " +
                                  std::to_string(optimizer.steps_taken() + 1) +
                                  "; aborting instead of skipping");
    }
    const GradTape tape = backward_loss(model, batch, cache);
    optimizer.step(model, tape);
    return loss;
}

TrainHistory fit(AlignmentModel& model, const std::vector<PairRecord>& train_records,
                 const std::vector<PairRecord>& val_records, FeatureStore& store,
                 const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    require(!train_records.empty(), "InvalidArgument", "train split is empty");

    Optimizer optimizer(config.optimizer, config.learning_rate);
    TrainHistory history;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (const auto& chunk :
             batch_indices(train_records.size(), config.batch_size, config.seed, epoch)) {
            const Batch batch = make_batch(train_records, chunk, store, model.vocab);
            double loss = 0.0;
            try {
                loss = train_step(model, batch, optimizer, config);
            } catch (const Error& e) {
                if (e.code() == "NonFiniteLoss") {
                    fail("NonFiniteLoss", "epoch " + std::to_string(epoch + 1) + ", batch " +
                                              std::to_string(n_batches + 1) + ": " + e.what());
                }
                throw;
            }
            epoch_loss += loss;
            ++n_batches;
        }
        history.train_loss.push_back(n_batches > 0 ? epoch_loss / static_cast<double>(n_batches)
                                                   : std::nan(""));

        double val_loss = std::nan("");
        if (!val_records.empty()) {
            double total = 0.0;
            std::size_t count = 0;
            for (const auto& chunk :
                 ordered_batch_indices(val_records.size(), config.batch_size)) {
                const Batch batch = make_batch(val_records, chunk, store, model.vocab);
                total += forward_loss(model, batch, nullptr);
                ++count;
            }
            if (count > 0) {
                val_loss = total / static_cast<double>(count);
            }
        }
        history.val_loss.push_back(val_loss);
        if (on_epoch) {
            on_epoch(epoch, history.train_loss.back(), val_loss);
        }

        const auto t1 = std::chrono::steady_clock::now();
        history.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return history;
}

// --- checkpoint IO ---

namespace {

constexpr char kMagic[4] = {'C', 'C', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32le(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32le(std::ifstream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    require(in.gcount() == 4, "BadMagic", std::string("truncated checkpoint before ") + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::vector<std::pair<std::string, const Matrix*>> tensor_list(const AlignmentModel& model) {
    std::vector<std::pair<std::string, const Matrix*>> tensors;
    if (model.image.mode == EncoderMode::toy) {
        tensors.emplace_back("image.W1", &model.image.w1);
        tensors.emplace_back("image.b1", &model.image.b1);
        tensors.emplace_back("image.W2", &model.image.w2);
        tensors.emplace_back("image.b2", &model.image.b2);
    }
    tensors.emplace_back("text.E", &model.text.embedding);
    tensors.emplace_back("Wv", &model.wv);
    tensors.emplace_back("Wt", &model.wt);
    tensors.emplace_back("tau", &model.tau);
    return tensors;
}

} // namespace

void save_checkpoint(const AlignmentModel& model, const std::filesystem::path& path) {
    const auto tensors = tensor_list(model);
    const ModelDims dims = model.dims();

    ordered_json header;
    header["dims"] = {{"d_in", dims.d_in},   {"hidden", dims.hidden}, {"d_v", dims.d_v},
                      {"d_t", dims.d_t},     {"joint", dims.joint},   {"vocab", dims.vocab}};
    header["image_mode"] = encoder_mode_name(model.image.mode);
    header["text_mode"] = encoder_mode_name(model.text.mode);
    header["vocab"] = model.vocab.tokens();

    ordered_json list = ordered_json::array();
    std::size_t offset = 0;
    for (const auto& [name, tensor] : tensors) {
        list.push_back({{"name", name},
                        {"rows", tensor->rows},
                        {"cols", tensor->cols},
                        {"byte_offset", offset}});
        offset += tensor->size() * 4;
    }
    header["tensors"] = std::move(list);
    const std::string header_bytes = header.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "IoError", "cannot write checkpoint " + path.string());
    out.write(kMagic, 4);
    put_u32le(out, kVersion);
    put_u32le(out, static_cast<std::uint32_t>(header_bytes.size()));
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));

    for (const auto& [name, tensor] : tensors) {
        for (const double v : tensor->data) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32le(out, bits);
        }
    }
    require(out.good(), "IoError", "failed writing checkpoint " + path.string());
}

AlignmentModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "IoError", "cannot open checkpoint " + path.string());

    char magic[4];
    in.read(magic, 4);
    require(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, "BadMagic",
            "not a checkpoint file: " + path.string());

    const std::uint32_t version = get_u32le(in, "version");
    require(version == kVersion, "VersionUnsupported",
            "checkpoint version " + std::to_string(version) + ", expected " +
                std::to_string(kVersion));

    const std::uint32_t header_len = get_u32le(in, "header");
    std::string header_bytes(header_len, '\0');
    in.read(header_bytes.data(), header_len);
    require(in.gcount() == static_cast<std::streamsize>(header_len), "CorruptRecord",
            "truncated checkpoint header");

    ordered_json header = ordered_json::parse(header_bytes, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("tensors") ||
        !header.contains("dims")) {
        fail("CorruptRecord", "malformed checkpoint header");
    }

    std::map<std::string, Matrix> tensors;
    std::size_t expected_offset = 0;
    try {
        for (const auto& entry : header.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto rows = entry.at("rows").get<std::size_t>();
            const auto cols = entry.at("cols").get<std::size_t>();
            const auto byte_offset = entry.at("byte_offset").get<std::size_t>();
            require(byte_offset == expected_offset, "CorruptRecord",
                    "non-contiguous tensor payload for " + name);

            Matrix m(rows, cols);
            std::vector<unsigned char> raw(rows * cols * 4);
            in.read(reinterpret_cast<char*>(raw.data()),
                    static_cast<std::streamsize>(raw.size()));
            require(in.gcount() == static_cast<std::streamsize>(raw.size()), "CorruptRecord",
                    "truncated payload for tensor " + name);
            for (std::size_t i = 0; i < rows * cols; ++i) {
                std::uint32_t bits = std::uint32_t(raw[4 * i]) |
                                     (std::uint32_t(raw[4 * i + 1]) << 8) |
                                     (std::uint32_t(raw[4 * i + 2]) << 16) |
                                     (std::uint32_t(raw[4 * i + 3]) << 24);
                float f;
                std::memcpy(&f, &bits, 4);
                m.data[i] = static_cast<double>(f);
            }
            expected_offset += rows * cols * 4;
            require(tensors.emplace(name, std::move(m)).second, "CorruptRecord",
                    "duplicate tensor " + name);
        }
    } catch (const ordered_json::exception& e) {
        fail("CorruptRecord", std::string("malformed tensor list: ") + e.what());
    }

    ModelDims dims;
    std::string image_mode;
    std::string text_mode;
    std::vector<std::string> vocab_tokens;
    try {
        const auto& d = header.at("dims");
        dims.d_in = d.at("d_in").get<std::size_t>();
        dims.hidden = d.at("hidden").get<std::size_t>();
        dims.d_v = d.at("d_v").get<std::size_t>();
        dims.d_t = d.at("d_t").get<std::size_t>();
        dims.joint = d.at("joint").get<std::size_t>();
        dims.vocab = d.at("vocab").get<std::size_t>();
        image_mode = header.at("image_mode").get<std::string>();
        text_mode = header.at("text_mode").get<std::string>();
        vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
    } catch (const ordered_json::exception& e) {
        fail("CorruptRecord", std::string("malformed checkpoint metadata: ") + e.what());
    }

    auto take = [&](const char* name, std::size_t rows, std::size_t cols) {
        auto it = tensors.find(name);
        require(it != tensors.end(), "ShapeMismatch",
                std::string("checkpoint lacks tensor ") + name);
        require(it->second.rows == rows && it->second.cols == cols, "ShapeMismatch",
                std::string("tensor ") + name + " is " + std::to_string(it->second.rows) + "x" +
                    std::to_string(it->second.cols) + ", expected " + std::to_string(rows) +
                    "x" + std::to_string(cols));
        return std::move(it->second);
    };

    AlignmentModel model;
    if (encoder_mode_from_name(image_mode) == EncoderMode::toy) {
        model.image.mode = EncoderMode::toy;
        model.image.d_in = dims.d_in;
        model.image.hidden = dims.hidden;
        model.image.d_out = dims.d_v;
        model.image.w1 = take("image.W1", dims.d_in, dims.hidden);
        model.image.b1 = take("image.b1", 1, dims.hidden);
        model.image.w2 = take("image.W2", dims.hidden, dims.d_v);
        model.image.b2 = take("image.b2", 1, dims.d_v);
    } else {
        require(dims.d_in == dims.d_v, "ShapeMismatch",
                "frozen image mode requires d_in == d_v");
        model.image = ImageEncoderParams::make_frozen(dims.d_in);
    }
    model.text.mode = encoder_mode_from_name(text_mode);
    model.text.embedding = take("text.E", dims.vocab, dims.d_t);
    model.wv = take("Wv", dims.d_v, dims.joint);
    model.wt = take("Wt", dims.d_t, dims.joint);
    model.tau = take("tau", 1, 1);
    clamp_tau(model.tau);

    require(vocab_tokens.size() + 2 == dims.vocab, "ShapeMismatch",
            "vocab token list disagrees with dims.vocab");
    model.vocab = Vocab::from_tokens(std::move(vocab_tokens));
    return model;
}

AlignmentModel load_checkpoint(const std::filesystem::path& path, const ModelDims& expected) {
    AlignmentModel model = load_checkpoint(path);
    const ModelDims got = model.dims();
    if (!(got == expected)) {
        fail("ShapeMismatch",
             "checkpoint dims (joint=" + std::to_string(got.joint) + ", d_v=" +
                 std::to_string(got.d_v) + ", d_t=" + std::to_string(got.d_t) +
                 ") differ from the configured dims (joint=" + std::to_string(expected.joint) +
                 ", d_v=" + std::to_string(expected.d_v) + ", d_t=" +
                 std::to_string(expected.d_t) + ")");
    }
    return model;
}

} // namespace cclip
