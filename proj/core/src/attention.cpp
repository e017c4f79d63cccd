#include "vtonlab/attention.hpp"

#include "vtonlab/errors.hpp"
#include "vtonlab/ops.hpp"

namespace vtonlab {

namespace {

void check_tokens(const TokenSequence& s, const char* what) {
    if (s.data.rank() != 3) throw InvalidArgument(std::string(what) + " must be (N, L, D), got " + shape_str(s.data.shape()));
}

nn::Linear linear_from(const Tensor& w) {
    if (w.rank() != 2) throw InvalidArgument("projection must be a matrix, got " + shape_str(w.shape()));
    nn::Linear l;
    l.weight = nn::Param(w, false);
    return l;
}

ag::Var constant(const Tensor& t) { return ag::Var::constant(t); }

}  // namespace

TokenSequence scaled_dot_attention(const TokenSequence& q, const TokenSequence& k, const TokenSequence& v) {
    check_tokens(q, "query");
    check_tokens(k, "key");
    check_tokens(v, "value");
    if (k.tokens() != v.tokens()) throw InvalidArgument("key and value token counts differ");
    if (q.width() != k.width()) throw InvalidArgument("query and key widths differ");
    ag::NoGradGuard guard;
    return {ag::attention(constant(q.data), constant(k.data), constant(v.data), 1).value(), q.origin};
}

TokenSequence decoupled_cross_attention(const TokenSequence& x, const TokenSequence& text, const TokenSequence& image,
                                        const DecoupledAttnWeights& w) {
    check_tokens(x, "query source");
    check_tokens(text, "text tokens");
    check_tokens(image, "image-prompt tokens");
    ag::NoGradGuard guard;
    auto block = DecoupledCrossAttention::from_weights(w);
    return {block.forward(constant(x.data), constant(text.data), constant(image.data)).value(), x.origin};
}

TokenSequence garment_fused_self_attention(const TokenSequence& tryon, const TokenSequence& garment,
                                           const SelfAttnWeights& w) {
    check_tokens(tryon, "tryon tokens");
    check_tokens(garment, "garment tokens");
    ag::NoGradGuard guard;
    auto block = SelfAttention::from_weights(w);
    return {block.forward(constant(tryon.data), constant(garment.data)).value(), tryon.origin};
}

SelfAttention::SelfAttention(std::int64_t dim, int heads_, const nn::Init& init)
    : to_q(dim, dim, false, init.child("to_q")),
      to_k(dim, dim, false, init.child("to_k")),
      to_v(dim, dim, false, init.child("to_v")),
      to_out(dim, dim, true, init.child("to_out")),
      heads(heads_) {}

SelfAttention SelfAttention::from_weights(const SelfAttnWeights& w) {
    SelfAttention a;
    a.to_q = linear_from(w.w_q);
    a.to_k = linear_from(w.w_k);
    a.to_v = linear_from(w.w_v);
    a.to_out = linear_from(w.w_out);
    a.heads = w.heads;
    return a;
}

ag::Var SelfAttention::forward(const ag::Var& x, const ag::Var& garment) const {
    ag::Var kv = x;
    if (garment.defined()) {
        if (garment.value().rank() != 3 || garment.shape()[0] != x.shape()[0] || garment.shape()[1] != x.shape()[1])
            throw GarmentAlignmentError("garment tokens " + shape_str(garment.shape()) +
                                        " do not align with tryon tokens " + shape_str(x.shape()));
        if (garment.shape()[2] != x.shape()[2])
            throw GarmentAlignmentError("garment token width " + std::to_string(garment.shape()[2]) +
                                        " differs from tryon width " + std::to_string(x.shape()[2]));
        kv = ag::concat1(x, garment);
    }
    ag::Var q = to_q.forward(x);
    ag::Var k = to_k.forward(kv);
    ag::Var v = to_v.forward(kv);
    return to_out.forward(ag::attention(q, k, v, heads));
}

void SelfAttention::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    to_q.visit(nn::join_name(prefix, "to_q"), f);
    to_k.visit(nn::join_name(prefix, "to_k"), f);
    to_v.visit(nn::join_name(prefix, "to_v"), f);
    to_out.visit(nn::join_name(prefix, "to_out"), f);
}

void SelfAttention::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    to_q.visit(nn::join_name(prefix, "to_q"), f);
    to_k.visit(nn::join_name(prefix, "to_k"), f);
    to_v.visit(nn::join_name(prefix, "to_v"), f);
    to_out.visit(nn::join_name(prefix, "to_out"), f);
}

DecoupledCrossAttention::DecoupledCrossAttention(std::int64_t dim, std::int64_t context_dim, int heads_,
                                                 bool image_branch, const nn::Init& init)
    : to_q(dim, dim, false, init.child("to_q")),
      to_k(context_dim, dim, false, init.child("to_k")),
      to_v(context_dim, dim, false, init.child("to_v")),
      to_out(dim, dim, true, init.child("to_out")),
      heads(heads_) {
    if (image_branch) {
        to_k_ip.emplace(context_dim, dim, false, init.child("to_k_ip"));
        to_v_ip.emplace(context_dim, dim, false, init.child("to_v_ip"));
    }
}

DecoupledCrossAttention DecoupledCrossAttention::from_weights(const DecoupledAttnWeights& w) {
    DecoupledCrossAttention a;
    a.to_q = linear_from(w.w_q);
    a.to_k = linear_from(w.w_kc);
    a.to_v = linear_from(w.w_vc);
    a.to_k_ip = linear_from(w.w_ki);
    a.to_v_ip = linear_from(w.w_vi);
    a.to_out = linear_from(w.w_out);
    a.heads = w.heads;
    return a;
}

ag::Var DecoupledCrossAttention::forward(const ag::Var& x, const ag::Var& text, const ag::Var& image) const {
    ag::Var q = to_q.forward(x);
    ag::Var z = ag::attention(q, to_k.forward(text), to_v.forward(text), heads);
    if (image.defined() && has_image_branch())
        z = ag::add(z, ag::attention(q, to_k_ip->forward(image), to_v_ip->forward(image), heads));
    return to_out.forward(z);
}

void DecoupledCrossAttention::visit(const std::string& prefix, const nn::ParamVisitor& f) {
    to_q.visit(nn::join_name(prefix, "to_q"), f);
    to_k.visit(nn::join_name(prefix, "to_k"), f);
    to_v.visit(nn::join_name(prefix, "to_v"), f);
    if (to_k_ip) to_k_ip->visit(nn::join_name(prefix, "to_k_ip"), f);
    if (to_v_ip) to_v_ip->visit(nn::join_name(prefix, "to_v_ip"), f);
    to_out.visit(nn::join_name(prefix, "to_out"), f);
}

void DecoupledCrossAttention::visit(const std::string& prefix, const nn::ConstParamVisitor& f) const {
    to_q.visit(nn::join_name(prefix, "to_q"), f);
    to_k.visit(nn::join_name(prefix, "to_k"), f);
    to_v.visit(nn::join_name(prefix, "to_v"), f);
    if (to_k_ip) to_k_ip->visit(nn::join_name(prefix, "to_k_ip"), f);
    if (to_v_ip) to_v_ip->visit(nn::join_name(prefix, "to_v_ip"), f);
    to_out.visit(nn::join_name(prefix, "to_out"), f);
}

}  // namespace vtonlab
