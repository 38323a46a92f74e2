#include "cclip/encoders.hpp"

#include <cmath>

namespace cclip {

namespace {

Matrix normal_init(std::size_t rows, std::size_t cols, std::size_t fan_in, Pcg64& rng) {
    Matrix m(rows, cols);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.data) {
        v = sigma * rng.next_normal();
    }
    return m;
}

} // namespace

std::string encoder_mode_name(EncoderMode mode) {
    return mode == EncoderMode::toy ? "toy" : "frozen";
}

EncoderMode encoder_mode_from_name(const std::string& name) {
    if (name == "toy") return EncoderMode::toy;
    if (name == "frozen") return EncoderMode::frozen;
    fail("ParseError", "unknown encoder mode '" + name + "'");
}

ImageEncoderParams ImageEncoderParams::make_toy(std::size_t d_in, std::size_t hidden,
                                                std::size_t d_out, Pcg64& rng) {
    require(d_in > 0 && hidden > 0 && d_out > 0, "InvalidArgument",
            "toy image encoder dims must be positive");
    ImageEncoderParams p;
    p.mode = EncoderMode::toy;
    p.d_in = d_in;
    p.hidden = hidden;
    p.d_out = d_out;
    p.w1 = normal_init(d_in, hidden, d_in, rng);
    p.b1 = normal_init(1, hidden, d_in, rng);
    p.w2 = normal_init(hidden, d_out, hidden, rng);
    p.b2 = normal_init(1, d_out, hidden, rng);
    return p;
}

ImageEncoderParams ImageEncoderParams::make_frozen(std::size_t dim) {
    require(dim > 0, "InvalidArgument", "frozen image encoder dim must be positive");
    ImageEncoderParams p;
    p.mode = EncoderMode::frozen;
    p.d_in = dim;
    p.hidden = 0;
    p.d_out = dim;
    return p;
}

TextEncoderParams TextEncoderParams::make(std::size_t vocab_size, std::size_t d_t, Pcg64& rng,
                                          EncoderMode mode) {
    require(vocab_size >= 2 && d_t > 0, "InvalidArgument",
            "text encoder needs vocab >= 2 and positive d_t");
    TextEncoderParams p;
    p.mode = mode;
    p.embedding = normal_init(vocab_size, d_t, d_t, rng);
    return p;
}

ImageForward encode_image(const ImageEncoderParams& params, const Matrix& inputs) {
    require(inputs.cols == params.d_in, "DimMismatch",
            "image input dimension " + std::to_string(inputs.cols) + ", expected " +
                std::to_string(params.d_in));
    ImageForward fwd;
    if (params.mode == EncoderMode::frozen) {
        fwd.out = inputs;
        return fwd;
    }
    fwd.hidden = relu(add_row_broadcast(matmul(inputs, params.w1), params.b1));
    fwd.out = add_row_broadcast(matmul(fwd.hidden, params.w2), params.b2);
    return fwd;
}

void encode_image_backward(const ImageEncoderParams& params, const Matrix& inputs,
                           const ImageForward& fwd, const Matrix& grad_out, GradTape& tape) {
    if (params.mode == EncoderMode::frozen) {
        return;
    }
    Matrix d_hidden;
    Matrix d_w2;
    matmul_backward(fwd.hidden, params.w2, grad_out, &d_hidden, &d_w2);
    tape.add("image.W2", std::move(d_w2));
    tape.add("image.b2", col_sum(grad_out));

    const Matrix d_pre = relu_backward(d_hidden, fwd.hidden);
    Matrix d_w1;
    matmul_backward(inputs, params.w1, d_pre, nullptr, &d_w1);
    tape.add("image.W1", std::move(d_w1));
    tape.add("image.b1", col_sum(d_pre));
}

Matrix encode_text(const TextEncoderParams& params,
                   const std::vector<std::vector<std::int32_t>>& sequences) {
    const std::size_t d = params.d_out();
    Matrix out(sequences.size(), d);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        std::size_t count = 0;
        for (const std::int32_t id : sequences[i]) {
            if (id == kPadTokenId) {
                continue;
            }
            require(id >= 0 && static_cast<std::size_t>(id) < params.vocab_size(),
                    "IndexOutOfRange",
                    "token id " + std::to_string(id) + " exceeds vocab of size " +
                        std::to_string(params.vocab_size()));
            for (std::size_t j = 0; j < d; ++j) {
                out(i, j) += params.embedding(static_cast<std::size_t>(id), j);
            }
            ++count;
        }
        if (count == 0) {
            fail("EmptySequence", "sequence " + std::to_string(i) + " has no non-PAD token");
        }
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) *= inv;
        }
    }
    return out;
}

void encode_text_backward(const TextEncoderParams& params,
                          const std::vector<std::vector<std::int32_t>>& sequences,
                          const Matrix& grad_out, GradTape& tape) {
    if (params.mode == EncoderMode::frozen) {
        return;
    }
    Matrix d_emb(params.embedding.rows, params.embedding.cols);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        std::size_t count = 0;
        for (const std::int32_t id : sequences[i]) {
            if (id != kPadTokenId) {
                ++count;
            }
        }
        if (count == 0) {
            continue; // forward already rejected this
        }
        const double inv = 1.0 / static_cast<double>(count);
        for (const std::int32_t id : sequences[i]) {
            if (id == kPadTokenId) {
                continue;
            }
            for (std::size_t j = 0; j < d_emb.cols; ++j) {
                d_emb(static_cast<std::size_t>(id), j) += grad_out(i, j) * inv;
            }
        }
    }
    tape.add("text.E", std::move(d_emb));
}

} // namespace cclip
