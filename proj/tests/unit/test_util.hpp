#pragma once

#include <cstring>
#include <vector>

#include "tdlab/model.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/tokens.hpp"

namespace tdlab::testutil {

inline ModelConfig small_config(std::size_t vocab = 258, std::size_t seq_len = 16, bool causal = true) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_kv_groups = 1;
  c.d_ffn = 32;
  c.seq_len = seq_len;
  c.vocab_size = vocab;
  c.causal = causal;
  return c;
}

inline TokenMatrix random_tokens(std::size_t rows, std::size_t cols, std::size_t n_regular, std::uint64_t seed) {
  Rng rng(seed);
  TokenMatrix m(rows, cols);
  for (auto& id : m.ids) id = static_cast<TokenId>(rng.below(n_regular));
  return m;
}

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace tdlab::testutil
