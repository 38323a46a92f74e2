#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cclip/numcore.hpp"
#include "cclip/rng.hpp"

namespace cclip {

enum class EncoderMode { toy, frozen };

// Token id 0 is PAD across the engine (see Vocab); pooling skips it.
inline constexpr std::int32_t kPadTokenId = 0;

std::string encoder_mode_name(EncoderMode mode);
EncoderMode encoder_mode_from_name(const std::string& name);

// Trainable one-hidden-layer MLP image encoder, or a frozen passthrough for
// workflows that feed pre-computed backbone features (d_in == d_out there;
// no parameters exist and the optimizer never sees any).
struct ImageEncoderParams {
    EncoderMode mode = EncoderMode::toy;
    std::size_t d_in = 0;
    std::size_t hidden = 0;
    std::size_t d_out = 0;
    Matrix w1; // d_in x hidden
    Matrix b1; // 1 x hidden
    Matrix w2; // hidden x d_out
    Matrix b2; // 1 x d_out

    static ImageEncoderParams make_toy(std::size_t d_in, std::size_t hidden,
                                       std::size_t d_out, Pcg64& rng);
    static ImageEncoderParams make_frozen(std::size_t dim);
};

// Mean-pooled token-embedding text encoder. Frozen mode keeps the (random)
// embedding table fixed and trains only the projection heads downstream.
struct TextEncoderParams {
    EncoderMode mode = EncoderMode::toy;
    Matrix embedding; // vocab_size x d_t; row 0 is PAD and never pooled

    std::size_t vocab_size() const { return embedding.rows; }
    std::size_t d_out() const { return embedding.cols; }

    static TextEncoderParams make(std::size_t vocab_size, std::size_t d_t, Pcg64& rng,
                                  EncoderMode mode = EncoderMode::toy);
};

struct ImageForward {
    Matrix hidden; // B x hidden, post-ReLU (empty in frozen mode)
    Matrix out;    // B x d_out
};

// toy: ReLU(x W1 + b1) W2 + b2; frozen: identity passthrough.
ImageForward encode_image(const ImageEncoderParams& params, const Matrix& inputs);

// Accumulates gradients w.r.t. W1/b1/W2/b2 onto the tape under
// "image.W1" etc. No-op in frozen mode.
void encode_image_backward(const ImageEncoderParams& params, const Matrix& inputs,
                           const ImageForward& fwd, const Matrix& grad_out, GradTape& tape);

// Mean of embedding rows over non-PAD tokens, one output row per sequence.
// EmptySequence if a sequence has no non-PAD token; IndexOutOfRange for ids
// beyond the table.
Matrix encode_text(const TextEncoderParams& params,
                   const std::vector<std::vector<std::int32_t>>& sequences);

// Accumulates d loss / d embedding under "text.E"; duplicate token ids within
// one sequence accumulate once per occurrence. No-op in frozen mode.
void encode_text_backward(const TextEncoderParams& params,
                          const std::vector<std::vector<std::int32_t>>& sequences,
                          const Matrix& grad_out, GradTape& tape);

} // namespace cclip
