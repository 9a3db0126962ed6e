#include "tdlab/model.hpp"

#include <stdexcept>

namespace tdlab {

namespace {

void check(bool ok, const char* field, const std::string& why) {
  if (!ok) throw std::invalid_argument(std::string("model.") + field + ": " + why);
}

struct ParamSpec {
  std::string name;
  Shape shape;
  bool is_gain;
};

std::vector<ParamSpec> layout(const ModelConfig& c) {
  const std::size_t hd = c.head_dim();
  std::vector<ParamSpec> out;
  out.push_back({"tok_embed", {c.vocab_size, c.d_model}, false});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", {c.d_model}, true});
    out.push_back({p + "wq", {c.d_model, c.n_heads * hd}, false});
    out.push_back({p + "wk", {c.d_model, c.n_kv_groups * hd}, false});
    out.push_back({p + "wv", {c.d_model, c.n_kv_groups * hd}, false});
    out.push_back({p + "q_norm", {hd}, true});
    out.push_back({p + "k_norm", {hd}, true});
    out.push_back({p + "wo", {c.n_heads * hd, c.d_model}, false});
    out.push_back({p + "mlp_norm", {c.d_model}, true});
    out.push_back({p + "w_gate", {c.d_model, c.d_ffn}, false});
    out.push_back({p + "w_up", {c.d_model, c.d_ffn}, false});
    out.push_back({p + "w_down", {c.d_ffn, c.d_model}, false});
  }
  out.push_back({"final_norm", {c.d_model}, true});
  out.push_back({"lm_head", {c.d_model, c.vocab_size}, false});
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  check(n_layers >= 1, "n_layers", "must be >= 1");
  check(d_model >= 2, "d_model", "must be >= 2");
  check(n_heads >= 1, "n_heads", "must be >= 1");
  check(d_model % n_heads == 0, "d_model", "must be divisible by n_heads");
  check((d_model / n_heads) % 2 == 0, "n_heads", "head dimension d_model/n_heads must be even for rotary embedding");
  check(n_kv_groups >= 1 && n_heads % n_kv_groups == 0, "n_kv_groups", "must divide n_heads");
  check(d_ffn >= 1, "d_ffn", "must be >= 1");
  check(seq_len >= 2, "seq_len", "must be >= 2");
  check(vocab_size >= 3, "vocab_size", "must be >= 3 (regular symbols + MASK + PAD)");
  check(attn_dropout_p >= 0.0 && attn_dropout_p < 1.0, "attn_dropout", "must be in [0, 1)");
  check(mlp_dropout_p >= 0.0 && mlp_dropout_p < 1.0, "mlp_dropout", "must be in [0, 1)");
  check(rope_base > 1.0, "rope_base", "must be > 1");
  check(rmsnorm_eps > 0.0, "rmsnorm_eps", "must be > 0");
  check(init_std > 0.0, "init_std", "must be > 0");
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& p : layout(config)) n += shape_numel(p.shape);
  return n;
}

Model::Model(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng = Rng::derive(init_seed, {0x1417});
  for (auto& spec : layout(config_)) {
    const std::size_t n = shape_numel(spec.shape);
    std::vector<double> values(n, 1.0);
    if (!spec.is_gain)
      for (double& v : values) v = rng.normal() * config_.init_std;
    params_.push_back({spec.name, Tensor(spec.shape, std::move(values), true)});
  }
}

Tensor& Model::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::out_of_range("no parameter named " + name);
}

const Tensor& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Model Model::clone() const {
  Model m;
  m.config_ = config_;
  m.training_ = training_;
  for (const auto& p : params_) {
    Tensor t(p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()),
             p.tensor.requires_grad());
    m.params_.push_back({p.name, std::move(t)});
  }
  return m;
}

Tensor Model::forward(const TokenMatrix& tokens, Rng* rng, std::span<const std::uint8_t> keep_rows) const {
  const ModelConfig& c = config_;
  const std::size_t B = tokens.rows, S = tokens.cols;
  if (S > c.seq_len)
    throw std::invalid_argument("forward: sequence length " + std::to_string(S) + " exceeds model seq_len " +
                                std::to_string(c.seq_len));
  if (B == 0 || S == 0) throw std::invalid_argument("forward: empty token matrix");
  const bool attn_drop = training_ && c.attn_dropout_p > 0.0;
  const bool mlp_drop = training_ && c.mlp_dropout_p > 0.0;
  if ((attn_drop || mlp_drop) && rng == nullptr)
    throw std::invalid_argument("forward: rng required for dropout in training mode");
  if (!keep_rows.empty() && keep_rows.size() != B * S)
    throw std::invalid_argument("forward: keep_rows must have B*S entries");

  const std::size_t hd = c.head_dim();
  const AttentionShape shape{B, S, c.n_heads, c.n_kv_groups, hd, c.causal};

  Tensor x = embedding(parameter("tok_embed"), tokens.ids);
  if (!keep_rows.empty()) x = mask_rows(x, keep_rows);

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Tensor h = rmsnorm(x, parameter(p + "attn_norm"), c.rmsnorm_eps);
    Tensor q = matmul(h, parameter(p + "wq"));
    Tensor k = matmul(h, parameter(p + "wk"));
    Tensor v = matmul(h, parameter(p + "wv"));
    q = reshape(rmsnorm(reshape(q, {B * S * c.n_heads, hd}), parameter(p + "q_norm"), c.rmsnorm_eps),
                {B * S, c.n_heads * hd});
    k = reshape(rmsnorm(reshape(k, {B * S * c.n_kv_groups, hd}), parameter(p + "k_norm"), c.rmsnorm_eps),
                {B * S, c.n_kv_groups * hd});
    q = rope(q, S, c.n_heads, hd, c.rope_base);
    k = rope(k, S, c.n_kv_groups, hd, c.rope_base);
    Tensor a = attention(q, k, v, shape, attn_drop ? c.attn_dropout_p : 0.0, attn_drop ? rng : nullptr);
    x = add(x, matmul(a, parameter(p + "wo")));

    h = rmsnorm(x, parameter(p + "mlp_norm"), c.rmsnorm_eps);
    Tensor u = swiglu(matmul(h, parameter(p + "w_gate")), matmul(h, parameter(p + "w_up")));
    if (mlp_drop) u = feature_dropout(u, c.mlp_dropout_p, *rng);
    x = add(x, matmul(u, parameter(p + "w_down")));
  }
  x = rmsnorm(x, parameter("final_norm"), c.rmsnorm_eps);
  return reshape(matmul(x, parameter("lm_head")), {B, S, c.vocab_size});
}

}  // namespace tdlab
