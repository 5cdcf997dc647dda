#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <utility>
#include <numeric>
#include <string>
#include <vector>

#include "scanet/numkern/ops.hpp"
#include "scanet/numkern/params.hpp"

namespace scanet::nk {

/// Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
inline Array positional_encoding(std::size_t length, std::size_t dim) {
  if (length < 1 || dim < 1) throw DimensionError("positional_encoding: empty shape");
  if (dim % 2 != 0) throw DimensionError("positional_encoding: dimension must be even");
  Array pe(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(dim));
      pe(pos, 2 * i) = std::sin(static_cast<double>(pos) * freq);
      pe(pos, 2 * i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

/// Memoized positional_encoding for repeated sequence shapes.
inline const Array& cached_positional_encoding(std::size_t length, std::size_t dim) {
  thread_local std::map<std::pair<std::size_t, std::size_t>, Array> cache;
  auto it = cache.find({length, dim});
  if (it == cache.end()) it = cache.emplace(std::make_pair(length, dim), positional_encoding(length, dim)).first;
  return it->second;
}

/// Pre-norm transformer layer: x + MHA(LN1(x)), then h + FFN(LN2(h)).
struct AttentionBlock {
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t ffn_dim = 0;
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, b1, w2, b2;

  static AttentionBlock create(ParamStore& store, const std::string& prefix, std::size_t dim,
                               std::size_t heads, std::size_t ffn_dim, Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
      throw DimensionError("attention block '" + prefix + "': dim not divisible by heads");
    }
    AttentionBlock b;
    b.dim = dim;
    b.heads = heads;
    b.ffn_dim = ffn_dim;
    auto p = [&](const char* name, Array init) { return store.add(prefix + "." + name, std::move(init)); };
    b.ln1_gamma = p("ln1.gamma", Array(1, dim, 1.0));
    b.ln1_beta = p("ln1.beta", Array(1, dim, 0.0));
    b.wq = p("wq", fan_in_init(dim, dim, rng));
    b.bq = p("bq", Array(1, dim));
    b.wk = p("wk", fan_in_init(dim, dim, rng));
    b.bk = p("bk", Array(1, dim));
    b.wv = p("wv", fan_in_init(dim, dim, rng));
    b.bv = p("bv", Array(1, dim));
    b.wo = p("wo", fan_in_init(dim, dim, rng, 0.5));
    b.bo = p("bo", Array(1, dim));
    b.ln2_gamma = p("ln2.gamma", Array(1, dim, 1.0));
    b.ln2_beta = p("ln2.beta", Array(1, dim, 0.0));
    b.w1 = p("w1", fan_in_init(dim, ffn_dim, rng));
    b.b1 = p("b1", Array(1, ffn_dim));
    b.w2 = p("w2", fan_in_init(ffn_dim, dim, rng, 0.5));
    b.b2 = p("b2", Array(1, dim));
    return b;
  }
};

struct KeyValue {
  Tensor keys;
  Tensor values;
};

inline Tensor pre_norm(const AttentionBlock& b, const Tensor& x) {
  if (x.cols() != b.dim) {
    throw DimensionError("attention: input width " + std::to_string(x.cols()) + " != model dim " +
                         std::to_string(b.dim));
  }
  if (x.rows() < 1) throw DimensionError("attention: empty sequence");
  return layer_norm(x, b.ln1_gamma, b.ln1_beta);
}

inline KeyValue project_kv(const AttentionBlock& b, const Tensor& normed) {
  return {linear(normed, b.wk, b.bk), linear(normed, b.wv, b.bv)};
}

/// Output rows for residual inputs `x_rows` (with their pre-normed copies)
/// attending over `kv`.
inline Tensor attend(const AttentionBlock& b, const Tensor& x_rows, const Tensor& normed_rows,
                     const KeyValue& kv) {
  Tensor q = linear(normed_rows, b.wq, b.bq);
  Tensor ctx = multi_head_attention(q, kv.keys, kv.values, b.heads);
  Tensor h = add(x_rows, linear(ctx, b.wo, b.bo));
  Tensor ff = linear(gelu(linear(layer_norm(h, b.ln2_gamma, b.ln2_beta), b.w1, b.b1)), b.w2, b.b2);
  return add(h, ff);
}

/// Full self-attention layer over x [L x d]; shape preserved.
inline Tensor attention_forward(const AttentionBlock& b, const Tensor& x) {
  Tensor normed = pre_norm(b, x);
  return attend(b, x, normed, project_kv(b, normed));
}

/// Same layer evaluated only at the listed rows; equals the corresponding rows
/// of attention_forward.
inline Tensor attention_rows(const AttentionBlock& b, const Tensor& x,
                             const std::vector<std::size_t>& rows) {
  Tensor normed = pre_norm(b, x);
  KeyValue kv = project_kv(b, normed);
  return attend(b, gather_rows(x, rows), gather_rows(normed, rows), kv);
}

}  // namespace scanet::nk
