#include "vtonlab/encoders.hpp"

#include <cctype>
#include <sstream>

#include "vtonlab/errors.hpp"
#include "vtonlab/hash.hpp"
#include "vtonlab/ops.hpp"

namespace vtonlab {

TextEncoder::TextEncoder(int vocab, int max_tokens, std::int64_t dim, int heads, const nn::Init& init)
    : token_embedding(init.child("token_embedding").normal({vocab + 1, dim}, 1.0), false),
      position_embedding(init.child("position_embedding").normal({max_tokens, dim}, 0.1), false),
      norm(dim),
      attn(dim, heads, init.child("attn")),
      final_norm(dim),
      vocab_(vocab),
      max_tokens_(max_tokens) {
    if (vocab < 1 || max_tokens < 1) throw InvalidArgument("text encoder needs a vocabulary and a token budget");
}

std::vector<int> TextEncoder::tokenize(const std::string& prompt) const {
    std::vector<int> ids;
    std::istringstream in(prompt);
    std::string word;
    while (in >> word && static_cast<int>(ids.size()) < max_tokens_) {
        for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        ids.push_back(1 + static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocab_)));
    }
    ids.resize(static_cast<std::size_t>(max_tokens_), 0);
    return ids;
}

ag::Var TextEncoder::forward(std::span<const std::vector<int>> token_ids) const {
    const std::int64_t n = static_cast<std::int64_t>(token_ids.size()), d = dim(), l = max_tokens_;
    Tensor x({n, l, d});
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& ids = token_ids[static_cast<std::size_t>(b)];
        if (static_cast<std::int64_t>(ids.size()) != l) throw InvalidArgument("token id row has the wrong length");
        for (std::int64_t i = 0; i < l; ++i) {
            const int id = ids[static_cast<std::size_t>(i)];
            if (id < 0 || id > vocab_) throw InvalidArgument("token id out of range");
            for (std::int64_t k = 0; k < d; ++k)
                x[(b * l + i) * d + k] = token_embedding.value()[id * d + k] + position_embedding.value()[i * d + k];
        }
    }
    // The lookup is done on values; embeddings are frozen.
    ag::Var h = ag::Var::constant(std::move(x));
    h = ag::add(h, attn.forward(norm.forward(h)));
    return final_norm.forward(h);
}

Tensor TextEncoder::encode(const std::string& prompt) const {
    const std::string p[] = {prompt};
    return encode_batch(p);
}

Tensor TextEncoder::encode_batch(std::span<const std::string> prompts) const {
    ag::NoGradGuard guard;
    std::vector<std::vector<int>> ids;
    for (const auto& p : prompts) ids.push_back(tokenize(p));
    return forward(ids).value();
}

void TextEncoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    f(nn::join_name(prefix, "token_embedding"), token_embedding);
    f(nn::join_name(prefix, "position_embedding"), position_embedding);
    norm.visit(nn::join_name(prefix, "norm"), f);
    attn.visit(nn::join_name(prefix, "attn"), f);
    final_norm.visit(nn::join_name(prefix, "final_norm"), f);
}

void TextEncoder::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    f(nn::join_name(prefix, "token_embedding"), token_embedding);
    f(nn::join_name(prefix, "position_embedding"), position_embedding);
    norm.visit(nn::join_name(prefix, "norm"), f);
    attn.visit(nn::join_name(prefix, "attn"), f);
    final_norm.visit(nn::join_name(prefix, "final_norm"), f);
}

ImageEncoder::ImageEncoder(std::vector<std::int64_t> widths, const nn::Init& init) {
    if (widths.empty()) throw InvalidArgument("image encoder needs at least one stage");
    std::int64_t in = 3;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        convs.emplace_back(in, widths[i], 3, 2, 1, init.child("conv" + std::to_string(i)));
        in = widths[i];
    }
}

ImageFeatures ImageEncoder::encode(const Tensor& images) const {
    Tensor batch = images;
    if (batch.rank() == 3) batch = batch.reshaped({1, batch.dim(0), batch.dim(1), batch.dim(2)});
    if (batch.rank() != 4 || batch.dim(1) != 3) throw InvalidArgument("image encoder expects RGB images");
    ag::NoGradGuard guard;
    ImageFeatures out;
    ag::Var h = ag::Var::constant(std::move(batch));
    for (const auto& conv : convs) {
        h = ag::silu(conv.forward(h));
        out.layers.push_back(h.value());
    }
    const Tensor& last = h.value();
    const std::int64_t n = last.dim(0), c = last.dim(1), hw = last.dim(2) * last.dim(3);
    out.embedding = Tensor({n, c});
    for (std::int64_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::int64_t k = 0; k < hw; ++k) s += last[i * hw + k];
        out.embedding[i] = s / static_cast<double>(hw);
    }
    return out;
}

void ImageEncoder::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit(nn::join_name(prefix, "conv" + std::to_string(i)), f);
}

void ImageEncoder::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit(nn::join_name(prefix, "conv" + std::to_string(i)), f);
}

ImagePromptProjection::ImagePromptProjection(std::int64_t embed_dim, int n_tokens, std::int64_t context_dim,
                                             const nn::Init& init)
    : proj(embed_dim, n_tokens * context_dim, true, init.child("proj")),
      norm(context_dim),
      n_tokens_(n_tokens),
      context_dim_(context_dim) {
    if (n_tokens < 1) throw InvalidArgument("image prompt needs at least one token");
}

ag::Var ImagePromptProjection::forward(const ag::Var& embedding) const {
    if (embedding.value().rank() != 2) throw InvalidArgument("image embedding must be (N, D)");
    ag::Var t = proj.forward(embedding);
    t = ag::reshape(t, {embedding.shape()[0], n_tokens_, context_dim_});
    return norm.forward(t);
}

void ImagePromptProjection::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    proj.visit(nn::join_name(prefix, "proj"), f);
    norm.visit(nn::join_name(prefix, "norm"), f);
}

void ImagePromptProjection::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    proj.visit(nn::join_name(prefix, "proj"), f);
    norm.visit(nn::join_name(prefix, "norm"), f);
}

TokenSequence encode_image_prompt(const Tensor& garment_image, const ImagePromptEmbedder& embedder) {
    if (!embedder.encoder || !embedder.projection) throw InvalidArgument("image prompt embedder is incomplete");
    if (garment_image.rank() != 3 || garment_image.dim(0) != 3)
        throw InvalidArgument("garment image must be (3, H, W)");
    const ImageFeatures feats = embedder.encoder->encode(garment_image);
    ag::NoGradGuard guard;
    return {embedder.projection->forward(ag::Var::constant(feats.embedding)).value(), TokenOrigin::image_prompt};
}

}  // namespace vtonlab
