#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tdlab/tensor.hpp"

namespace tdlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return make_op_output({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul",
                        [a, b, m, k, n](std::span<const double> g) {
                          ConstMapMat dc(g.data(), m, n);
                          if (auto ga = grad_sink(a); !ga.empty())
                            MapMat(ga.data(), m, k).noalias() += dc * ConstMapMat(b.data().data(), k, n).transpose();
                          if (auto gb = grad_sink(b); !gb.empty())
                            MapMat(gb.data(), k, n).noalias() += ConstMapMat(a.data().data(), m, k).transpose() * dc;
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op_output(a.shape(), std::move(out), {a, b}, "add", [a, b](std::span<const double> g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op_output(a.shape(), std::move(out), {a, b}, "mul", [a, b](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    if (auto gb = grad_sink(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_op_output(a.shape(), std::move(out), {a}, "scale", [a, factor](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_op_output({1}, {s}, {a}, "sum", [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty())
      for (double& v : ga) v += g[0];
  });
}

Tensor half_sum_squares(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return make_op_output({1}, {0.5 * s}, {a}, "half_sum_squares", [a](std::span<const double> g) {
    if (auto ga = grad_sink(a); !ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * a.data()[i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_output(std::move(shape), std::move(out), {a}, "reshape",
                        [a](std::span<const double> g) { accumulate_grad(a, g); });
}

Tensor softmax(const Tensor& a) {
  require(a.rank() >= 1, "softmax: rank-0 input");
  const std::size_t cols = last_dim(a);
  const std::size_t rows = a.numel() / cols;
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = out.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  return make_op_output(a.shape(), std::move(out), {a}, "softmax",
                        [a, probs, rows, cols](std::span<const double> g) {
                          auto ga = grad_sink(a);
                          if (ga.empty()) return;
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* p = probs->data() + r * cols;
                            const double* gr = g.data() + r * cols;
                            double dot = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * p[c];
                            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += p[c] * (gr[c] - dot);
                          }
                        });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require(table.rank() == 2, "embedding: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      require(false, "embedding: token id " + std::to_string(ids[i]) + " out of range for vocab " +
                         std::to_string(vocab));
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  std::vector<TokenId> idx(ids.begin(), ids.end());
  return make_op_output({ids.size(), d}, std::move(out), {table}, "embedding",
                        [table, idx = std::move(idx), d](std::span<const double> g) {
                          auto gt = grad_sink(table);
                          if (gt.empty()) return;
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            double* dst = gt.data() + static_cast<std::size_t>(idx[i]) * d;
                            const double* src = g.data() + i * d;
                            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                          }
                        });
}

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t d = last_dim(x);
  require(gain.numel() == d, "rmsnorm: gain of size " + std::to_string(gain.numel()) + " for width " +
                                 std::to_string(d));
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  auto inv_rms = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double ms = 0.0;
    for (std::size_t c = 0; c < d; ++c) ms += xr[c] * xr[c];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
    (*inv_rms)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xr[c] * inv * gv[c];
  }
  return make_op_output(x.shape(), std::move(out), {x, gain}, "rmsnorm",
                        [x, gain, inv_rms, rows, d](std::span<const double> g) {
                          auto gx = grad_sink(x);
                          auto gg = grad_sink(gain);
                          const auto xv = x.data();
                          const auto gv = gain.data();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const double* xr = xv.data() + r * d;
                            const double* gr = g.data() + r * d;
                            const double inv = (*inv_rms)[r];
                            if (!gg.empty())
                              for (std::size_t c = 0; c < d; ++c) gg[c] += gr[c] * xr[c] * inv;
                            if (!gx.empty()) {
                              double dot = 0.0;
                              for (std::size_t c = 0; c < d; ++c) dot += gr[c] * gv[c] * xr[c];
                              const double k = dot * inv * inv * inv / static_cast<double>(d);
                              for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += gr[c] * gv[c] * inv - xr[c] * k;
                            }
                          }
                        });
}

Tensor swiglu(const Tensor& gate, const Tensor& up) {
  require_same_shape(gate, up, "swiglu");
  std::vector<double> out(gate.numel());
  const auto a = gate.data(), b = up.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / (1.0 + std::exp(-a[i])) * b[i];
  return make_op_output(gate.shape(), std::move(out), {gate, up}, "swiglu",
                        [gate, up](std::span<const double> g) {
                          auto ga = grad_sink(gate);
                          auto gb = grad_sink(up);
                          const auto a = gate.data(), b = up.data();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double s = 1.0 / (1.0 + std::exp(-a[i]));
                            if (!ga.empty()) ga[i] += g[i] * b[i] * s * (1.0 + a[i] * (1.0 - s));
                            if (!gb.empty()) gb[i] += g[i] * a[i] * s;
                          }
                        });
}

Tensor rope(const Tensor& x, std::size_t seq_len, std::size_t n_heads, std::size_t head_dim, double base) {
  require(head_dim % 2 == 0, "rope: head_dim must be even, got " + std::to_string(head_dim));
  require(x.rank() == 2 && x.dim(1) == n_heads * head_dim,
          "rope: expected [rows, " + std::to_string(n_heads * head_dim) + "], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), half = head_dim / 2;
  // cos/sin table per (position, pair)
  auto table = std::make_shared<std::vector<double>>(seq_len * half * 2);
  for (std::size_t pos = 0; pos < seq_len; ++pos)
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      (*table)[(pos * half + i) * 2] = std::cos(angle);
      (*table)[(pos * half + i) * 2 + 1] = std::sin(angle);
    }
  auto rotate = [=](const double* src, double* dst, bool inverse) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t pos = r % seq_len;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = r * n_heads * head_dim + h * head_dim;
        for (std::size_t i = 0; i < half; ++i) {
          const double c = (*table)[(pos * half + i) * 2];
          const double s = inverse ? -(*table)[(pos * half + i) * 2 + 1] : (*table)[(pos * half + i) * 2 + 1];
          const double x1 = src[off + i], x2 = src[off + i + half];
          dst[off + i] += x1 * c - x2 * s;
          dst[off + i + half] += x1 * s + x2 * c;
        }
      }
    }
  };
  std::vector<double> out(x.numel(), 0.0);
  rotate(x.data().data(), out.data(), false);
  return make_op_output(x.shape(), std::move(out), {x}, "rope", [x, rotate](std::span<const double> g) {
    auto gx = grad_sink(x);
    if (!gx.empty()) rotate(g.data(), gx.data(), true);
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& s, double dropout_p,
                 Rng* rng) {
  const std::size_t rows = s.batch * s.seq;
  require(s.n_kv_groups > 0 && s.n_heads % s.n_kv_groups == 0, "attention: n_heads must be divisible by n_kv_groups");
  require(q.rank() == 2 && q.dim(0) == rows && q.dim(1) == s.n_heads * s.head_dim,
          "attention: bad query shape " + shape_str(q.shape()));
  require(k.rank() == 2 && k.dim(0) == rows && k.dim(1) == s.n_kv_groups * s.head_dim,
          "attention: bad key shape " + shape_str(k.shape()));
  require(v.shape() == k.shape(), "attention: value shape " + shape_str(v.shape()) + " != key shape");
  require(dropout_p >= 0.0 && dropout_p < 1.0, "attention: dropout probability must be in [0,1)");
  const bool use_dropout = dropout_p > 0.0 && rng != nullptr;

  const auto S = static_cast<Eigen::Index>(s.seq);
  const auto D = static_cast<Eigen::Index>(s.head_dim);
  const std::size_t q_stride = s.n_heads * s.head_dim;
  const std::size_t kv_stride = s.n_kv_groups * s.head_dim;
  const std::size_t heads_per_group = s.n_heads / s.n_kv_groups;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  const double keep_scale = use_dropout ? 1.0 / (1.0 - dropout_p) : 1.0;
  const std::size_t block = s.seq * s.seq;

  // Saved for backward: softmax probabilities and (if any) the dropout keep mask.
  auto probs = std::make_shared<std::vector<double>>(s.batch * s.n_heads * block);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(use_dropout ? probs->size() : 0);
  std::vector<double> out(rows * q_stride, 0.0);

  RowMat qh(S, D), kh(S, D), vh(S, D), scores(S, S);
  auto gather = [&](const double* src, std::size_t stride, std::size_t b, std::size_t col, RowMat& dst) {
    for (Eigen::Index i = 0; i < S; ++i)
      std::copy_n(src + (b * s.seq + static_cast<std::size_t>(i)) * stride + col, s.head_dim, &dst(i, 0));
  };

  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t h = 0; h < s.n_heads; ++h) {
      const std::size_t grp = h / heads_per_group;
      gather(q.data().data(), q_stride, b, h * s.head_dim, qh);
      gather(k.data().data(), kv_stride, b, grp * s.head_dim, kh);
      gather(v.data().data(), kv_stride, b, grp * s.head_dim, vh);
      scores.noalias() = qh * kh.transpose();
      double* p = probs->data() + (b * s.n_heads + h) * block;
      for (Eigen::Index i = 0; i < S; ++i) {
        const Eigen::Index limit = s.causal ? i + 1 : S;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < limit; ++j) mx = std::max(mx, scores(i, j) * inv_sqrt);
        double z = 0.0;
        for (Eigen::Index j = 0; j < limit; ++j) z += (p[i * S + j] = std::exp(scores(i, j) * inv_sqrt - mx));
        for (Eigen::Index j = 0; j < limit; ++j) p[i * S + j] /= z;
        for (Eigen::Index j = limit; j < S; ++j) p[i * S + j] = 0.0;
      }
      Eigen::Map<RowMat> pm(p, S, S);
      RowMat pd;
      if (use_dropout) {
        std::uint8_t* m = keep->data() + (b * s.n_heads + h) * block;
        pd = pm;
        for (std::size_t e = 0; e < block; ++e) {
          m[e] = rng->bernoulli(dropout_p) ? 0 : 1;
          pd.data()[e] = m[e] ? pd.data()[e] * keep_scale : 0.0;
        }
      }
      RowMat oh = use_dropout ? RowMat(pd * vh) : RowMat(pm * vh);
      for (Eigen::Index i = 0; i < S; ++i)
        std::copy_n(&oh(i, 0), s.head_dim, out.data() + (b * s.seq + static_cast<std::size_t>(i)) * q_stride + h * s.head_dim);
    }
  }

  return make_op_output(
      q.shape(), std::move(out), {q, k, v}, "attention",
      [q, k, v, s, probs, keep, use_dropout, keep_scale, inv_sqrt, S, D, q_stride, kv_stride, heads_per_group,
       block](std::span<const double> g) {
        auto gq = grad_sink(q);
        auto gk = grad_sink(k);
        auto gv = grad_sink(v);
        RowMat qh(S, D), kh(S, D), vh(S, D), go(S, D);
        auto gather = [&](const double* src, std::size_t stride, std::size_t b, std::size_t col, RowMat& dst) {
          for (Eigen::Index i = 0; i < S; ++i)
            std::copy_n(src + (b * s.seq + static_cast<std::size_t>(i)) * stride + col, s.head_dim, &dst(i, 0));
        };
        auto scatter_add = [&](const RowMat& src, std::span<double> dst, std::size_t stride, std::size_t b,
                               std::size_t col) {
          for (Eigen::Index i = 0; i < S; ++i) {
            double* d = dst.data() + (b * s.seq + static_cast<std::size_t>(i)) * stride + col;
            for (Eigen::Index c = 0; c < D; ++c) d[c] += src(i, c);
          }
        };
        for (std::size_t b = 0; b < s.batch; ++b) {
          for (std::size_t h = 0; h < s.n_heads; ++h) {
            const std::size_t grp = h / heads_per_group;
            gather(q.data().data(), q_stride, b, h * s.head_dim, qh);
            gather(k.data().data(), kv_stride, b, grp * s.head_dim, kh);
            gather(v.data().data(), kv_stride, b, grp * s.head_dim, vh);
            gather(g.data(), q_stride, b, h * s.head_dim, go);
            Eigen::Map<const RowMat> pm(probs->data() + (b * s.n_heads + h) * block, S, S);
            RowMat pd = pm;
            if (use_dropout) {
              const std::uint8_t* m = keep->data() + (b * s.n_heads + h) * block;
              for (std::size_t e = 0; e < block; ++e) pd.data()[e] = m[e] ? pd.data()[e] * keep_scale : 0.0;
            }
            if (!gv.empty()) scatter_add(RowMat(pd.transpose() * go), gv, kv_stride, b, grp * s.head_dim);
            RowMat dp = go * vh.transpose();
            if (use_dropout) {
              const std::uint8_t* m = keep->data() + (b * s.n_heads + h) * block;
              for (std::size_t e = 0; e < block; ++e) dp.data()[e] = m[e] ? dp.data()[e] * keep_scale : 0.0;
            }
            // softmax backward, folded with the 1/sqrt(d) score scale
            RowMat ds(S, S);
            for (Eigen::Index i = 0; i < S; ++i) {
              double dot = 0.0;
              for (Eigen::Index j = 0; j < S; ++j) dot += dp(i, j) * pm(i, j);
              for (Eigen::Index j = 0; j < S; ++j) ds(i, j) = pm(i, j) * (dp(i, j) - dot) * inv_sqrt;
            }
            if (!gq.empty()) scatter_add(RowMat(ds * kh), gq, q_stride, b, h * s.head_dim);
            if (!gk.empty()) scatter_add(RowMat(ds.transpose() * qh), gk, kv_stride, b, grp * s.head_dim);
          }
        }
      });
}

Tensor feature_dropout(const Tensor& h, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, "feature_dropout: probability must be in [0,1), got " + std::to_string(p));
  if (p == 0.0) return h;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(h.numel());
  std::vector<double> out(h.numel());
  const auto x = h.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] = x[i] * (*mask)[i];
  }
  return make_op_output(h.shape(), std::move(out), {h}, "feature_dropout", [h, mask](std::span<const double> g) {
    if (auto gh = grad_sink(h); !gh.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] * (*mask)[i];
  });
}

Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> keep) {
  require(!keep.empty() && x.numel() % keep.size() == 0,
          "mask_rows: " + std::to_string(keep.size()) + " row flags for shape " + shape_str(x.shape()));
  const std::size_t width = x.numel() / keep.size();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < keep.size(); ++r)
    if (!keep[r]) std::fill_n(out.data() + r * width, width, 0.0);
  std::vector<std::uint8_t> flags(keep.begin(), keep.end());
  return make_op_output(x.shape(), std::move(out), {x}, "mask_rows",
                        [x, flags = std::move(flags), width](std::span<const double> g) {
                          auto gx = grad_sink(x);
                          if (gx.empty()) return;
                          for (std::size_t r = 0; r < flags.size(); ++r)
                            if (flags[r])
                              for (std::size_t c = 0; c < width; ++c) gx[r * width + c] += g[r * width + c];
                        });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                             std::span<const std::uint8_t> position_mask, std::span<const double> weights,
                             std::vector<double>* nll_out) {
  require(logits.rank() >= 2, "softmax_cross_entropy: logits must be [n, V], got " + shape_str(logits.shape()));
  const std::size_t vocab = last_dim(logits);
  const std::size_t n = logits.numel() / vocab;
  require(targets.size() == n && position_mask.size() == n && weights.size() == n,
          "softmax_cross_entropy: expected " + std::to_string(n) + " targets/mask/weights");
  const auto x = logits.data();
  double total = 0.0;
  auto lse = std::make_shared<std::vector<double>>(n, 0.0);
  if (nll_out) nll_out->assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!position_mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vocab)
      require(false, "softmax_cross_entropy: target " + std::to_string(targets[i]) + " out of range for V=" +
                         std::to_string(vocab));
    if (!(std::isfinite(weights[i]) && weights[i] >= 0.0))
      require(false, "softmax_cross_entropy: weights must be finite and >= 0");
    const double* row = x.data() + i * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    (*lse)[i] = mx + std::log(z);
    const double nll = (*lse)[i] - row[targets[i]];
    if (nll_out) (*nll_out)[i] = nll;
    total += weights[i] * nll;
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(position_mask.begin(), position_mask.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_op_output(
      {1}, {total}, {logits}, "softmax_cross_entropy",
      [logits, lse, tgt = std::move(tgt), msk = std::move(msk), w = std::move(w), n, vocab](std::span<const double> g) {
        auto gl = grad_sink(logits);
        if (gl.empty()) return;
        const auto x = logits.data();
        for (std::size_t i = 0; i < n; ++i) {
          if (!msk[i]) continue;
          const double scale_i = g[0] * w[i];
          const double* row = x.data() + i * vocab;
          double* grow = gl.data() + i * vocab;
          for (std::size_t c = 0; c < vocab; ++c) grow[c] += scale_i * std::exp(row[c] - (*lse)[i]);
          grow[tgt[i]] -= scale_i;
        }
      });
}

}  // namespace tdlab
