#pragma once

#include <string>
#include <vector>

#include "vtonlab/attention.hpp"

namespace vtonlab {

// Frozen toy text encoder: hashed whitespace tokens, a fixed embedding table,
// one self-attention layer. Prompts shorter than max_tokens are padded with
// token 0, so the empty prompt is the null-text embedding.
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(int vocab, int max_tokens, std::int64_t dim, int heads, const nn::Init& init);

    std::vector<int> tokenize(const std::string& prompt) const;
    Tensor encode(const std::string& prompt) const;  // (1, max_tokens, dim)
    Tensor encode_batch(std::span<const std::string> prompts) const;
    ag::Var forward(std::span<const std::vector<int>> token_ids) const;

    int max_tokens() const { return max_tokens_; }
    std::int64_t dim() const { return token_embedding.value().dim(1); }

    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    nn::Param token_embedding;     // (vocab + 1, dim)
    nn::Param position_embedding;  // (max_tokens, dim)
    nn::LayerNorm norm;
    SelfAttention attn;
    nn::LayerNorm final_norm;

private:
    int vocab_ = 0;
    int max_tokens_ = 0;
};

struct ImageFeatures {
    Tensor embedding;            // (N, D) global pooled embedding
    std::vector<Tensor> layers;  // per-layer activations, (N, C_l, H_l, W_l)
};

// Frozen toy image encoder: three stride-2 conv + SiLU stages, global
// average pooling. Serves the image prompt and the evaluation metrics.
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(std::vector<std::int64_t> widths, const nn::Init& init);

    ImageFeatures encode(const Tensor& images) const;  // (N,3,H,W) or (3,H,W)
    std::int64_t embed_dim() const { return convs.back().out_channels(); }

    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    std::vector<nn::Conv2d> convs;
};

// Trainable projection of the global image embedding to n_tokens context
// tokens (H_g).
class ImagePromptProjection {
public:
    ImagePromptProjection() = default;
    ImagePromptProjection(std::int64_t embed_dim, int n_tokens, std::int64_t context_dim, const nn::Init& init);

    ag::Var forward(const ag::Var& embedding) const;  // (N, D) -> (N, n_tokens, context_dim)
    int n_tokens() const { return n_tokens_; }

    void visit(const std::string& prefix, const nn::ParamVisitor& f);
    void visit(const std::string& prefix, const nn::ConstParamVisitor& f) const;

    nn::Linear proj;
    nn::LayerNorm norm;

private:
    int n_tokens_ = 0;
    std::int64_t context_dim_ = 0;
};

struct ImagePromptEmbedder {
    const ImageEncoder* encoder = nullptr;
    const ImagePromptProjection* projection = nullptr;
};

// H_g for a garment image; gradients (if recording) reach only the projection.
TokenSequence encode_image_prompt(const Tensor& garment_image, const ImagePromptEmbedder& embedder);

}  // namespace vtonlab
