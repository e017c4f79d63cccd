#pragma once

#include <optional>

#include "vtonlab/nn.hpp"

namespace vtonlab {

enum class TokenOrigin { spatial, text, image_prompt, garment };

// (N_batch, N_tokens, d_model) tokens plus where they came from.
struct TokenSequence {
    Tensor data;
    TokenOrigin origin = TokenOrigin::spatial;

    std::int64_t batch() const { return data.dim(0); }
    std::int64_t tokens() const { return data.dim(1); }
    std::int64_t width() const { return data.dim(2); }
};

// Plain projection matrices, each (d_out, d_in), for the functional API.
struct SelfAttnWeights {
    Tensor w_q, w_k, w_v, w_out;
    int heads = 1;
};

struct DecoupledAttnWeights {
    Tensor w_q;
    Tensor w_kc, w_vc;  // text branch
    Tensor w_ki, w_vi;  // image-prompt branch
    Tensor w_out;
    int heads = 1;
};

// softmax(Q K^T / sqrt(d)) V with a single head.
TokenSequence scaled_dot_attention(const TokenSequence& q, const TokenSequence& k, const TokenSequence& v);

// Attention(Q, K_c, V_c) + Attention(Q, K_i, V_i), then the output projection.
TokenSequence decoupled_cross_attention(const TokenSequence& x, const TokenSequence& text, const TokenSequence& image,
                                        const DecoupledAttnWeights& w);

// Self-attention over [tryon; garment] concatenated on the token axis; only
// the first N (tryon) outputs are returned.
TokenSequence garment_fused_self_attention(const TokenSequence& tryon, const TokenSequence& garment,
                                           const SelfAttnWeights& w);

// Self-attention block used inside the UNets. When a garment sequence is
// supplied it is appended to the keys/values; queries come from x alone, which
// is the same as attending over 2N tokens and keeping the first N rows.
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(std::int64_t dim, int heads, const nn::Init& init);
    static SelfAttention from_weights(const SelfAttnWeights& w);

    ag::Var forward(const ag::Var& x, const ag::Var& garment = {}) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    nn::Linear to_q, to_k, to_v, to_out;
    int heads = 1;
};

// Cross-attention with an optional decoupled image-prompt branch.
class DecoupledCrossAttention {
public:
    DecoupledCrossAttention() = default;
    DecoupledCrossAttention(std::int64_t dim, std::int64_t context_dim, int heads, bool image_branch,
                            const nn::Init& init);
    static DecoupledCrossAttention from_weights(const DecoupledAttnWeights& w);

    ag::Var forward(const ag::Var& x, const ag::Var& text, const ag::Var& image = {}) const;
    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    bool has_image_branch() const { return to_k_ip.has_value(); }

    nn::Linear to_q, to_k, to_v, to_out;
    std::optional<nn::Linear> to_k_ip, to_v_ip;
    int heads = 1;
};

}  // namespace vtonlab
