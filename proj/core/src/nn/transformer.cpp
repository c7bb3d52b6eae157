#include "sentlat/nn/transformer.hpp"

#include <cmath>
#include <random>

namespace sentlat::nn {

using ad::Tensor;

void TransformerConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_ff == 0 || vocab_size == 0 || max_positions == 0) {
    throw std::invalid_argument("transformer dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                std::to_string(n_heads));
  }
}

template <std::floating_point T>
std::size_t PackedInput<T>::add_segment(std::span<const InputItem<T>> seq, std::span<const std::uint8_t> is_private,
                                        std::size_t first_position) {
  if (seq.empty()) throw std::invalid_argument("empty segment");
  if (!is_private.empty() && is_private.size() != seq.size()) {
    throw std::invalid_argument("private mask length does not match the segment");
  }
  const std::size_t start = items.size();
  layout.segments.push_back({start, seq.size()});
  layout.is_private.resize(start, 0);
  std::size_t pos = first_position;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const bool priv = !is_private.empty() && is_private[i];
    items.push_back(seq[i]);
    positions.push_back(pos);
    layout.is_private.push_back(priv ? 1 : 0);
    if (!priv) ++pos;
  }
  return start;
}

namespace {

template <std::floating_point T>
Tensor<T> normal_param(ad::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(ad::shape_size(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <std::floating_point T>
Tensor<T> const_param(std::size_t n, T value) {
  return Tensor<T>::full({n}, value, true);
}

}  // namespace

template <std::floating_point T>
Transformer<T>::Transformer(TransformerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d_model, f = cfg_.d_ff;
  const double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  wte_ = normal_param<T>({cfg_.vocab_size, d}, 0.02, rng);
  wpe_ = normal_param<T>({cfg_.max_positions, d}, 0.01, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Block b;
    b.ln1_g = const_param<T>(d, T(1));
    b.ln1_b = const_param<T>(d, T(0));
    b.w_qkv = normal_param<T>({d, 3 * d}, 0.02, rng);
    b.b_qkv = const_param<T>(3 * d, T(0));
    b.w_o = normal_param<T>({d, d}, resid_std, rng);
    b.b_o = const_param<T>(d, T(0));
    b.ln2_g = const_param<T>(d, T(1));
    b.ln2_b = const_param<T>(d, T(0));
    b.w_fc = normal_param<T>({d, f}, 0.02, rng);
    b.b_fc = const_param<T>(f, T(0));
    b.w_proj = normal_param<T>({f, d}, resid_std, rng);
    b.b_proj = const_param<T>(d, T(0));
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = const_param<T>(d, T(1));
  lnf_b_ = const_param<T>(d, T(0));
}

template <std::floating_point T>
std::vector<std::pair<std::string, Tensor<T>>> Transformer<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("wte", wte_);
  out.emplace_back("wpe", wpe_);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "h" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.g", b.ln1_g);
    out.emplace_back(p + "ln1.b", b.ln1_b);
    out.emplace_back(p + "attn.w_qkv", b.w_qkv);
    out.emplace_back(p + "attn.b_qkv", b.b_qkv);
    out.emplace_back(p + "attn.w_o", b.w_o);
    out.emplace_back(p + "attn.b_o", b.b_o);
    out.emplace_back(p + "ln2.g", b.ln2_g);
    out.emplace_back(p + "ln2.b", b.ln2_b);
    out.emplace_back(p + "mlp.w_fc", b.w_fc);
    out.emplace_back(p + "mlp.b_fc", b.b_fc);
    out.emplace_back(p + "mlp.w_proj", b.w_proj);
    out.emplace_back(p + "mlp.b_proj", b.b_proj);
  }
  out.emplace_back("ln_f.g", lnf_g_);
  out.emplace_back("ln_f.b", lnf_b_);
  return out;
}

template <std::floating_point T>
std::vector<Tensor<T>> Transformer<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <std::floating_point T>
void Transformer<T>::set_trainable(bool on) {
  for (auto& t : parameters()) t.set_requires_grad(on);
}

template <std::floating_point T>
Transformer<T> Transformer<T>::clone() const {
  Transformer c;
  c.cfg_ = cfg_;
  auto copy = [](const Tensor<T>& t) {
    return Tensor<T>::from(t.shape(), std::vector<T>(t.data().begin(), t.data().end()), t.requires_grad());
  };
  c.wte_ = copy(wte_);
  c.wpe_ = copy(wpe_);
  for (const auto& b : blocks_) {
    c.blocks_.push_back(Block{copy(b.ln1_g), copy(b.ln1_b), copy(b.w_qkv), copy(b.b_qkv), copy(b.w_o), copy(b.b_o),
                              copy(b.ln2_g), copy(b.ln2_b), copy(b.w_fc), copy(b.b_fc), copy(b.w_proj),
                              copy(b.b_proj)});
  }
  c.lnf_g_ = copy(lnf_g_);
  c.lnf_b_ = copy(lnf_b_);
  return c;
}

template <std::floating_point T>
KVCache<T> Transformer<T>::make_cache() const {
  KVCache<T> c;
  c.keys.resize(cfg_.n_layers);
  c.values.resize(cfg_.n_layers);
  return c;
}

template <std::floating_point T>
Tensor<T> Transformer<T>::final_norm(const Tensor<T>& residual) const {
  return ad::layer_norm(residual, lnf_g_, lnf_b_);
}

template <std::floating_point T>
Tensor<T> Transformer<T>::logits(const Tensor<T>& hidden) const {
  return ad::matmul_nt(hidden, wte_);
}

template <std::floating_point T>
ForwardResult<T> Transformer<T>::forward(const PackedInput<T>& in, const ForwardOptions<T>& opt) const {
  const std::size_t n = in.rows();
  const std::size_t d = cfg_.d_model;
  if (n == 0) throw std::invalid_argument("forward on an empty input");
  if (in.positions.size() != n) throw std::invalid_argument("positions do not match items");
  KVCache<T>* cache = opt.cache;
  if (cache) {
    if (in.layout.segments.size() != 1) throw std::invalid_argument("cached forward takes a single segment");
    if (cache->keys.size() != cfg_.n_layers) {
      cache->keys.resize(cfg_.n_layers);
      cache->values.resize(cfg_.n_layers);
    }
  }
  for (std::size_t p : in.positions) {
    if (p >= cfg_.max_positions) {
      throw SequenceOverflow("position " + std::to_string(p) + " exceeds max_positions " +
                             std::to_string(cfg_.max_positions));
    }
  }

  std::vector<ad::RowRef<T>> refs;
  refs.reserve(n);
  for (const auto& it : in.items) {
    if (it.is_token()) {
      if (static_cast<std::size_t>(it.token_id) >= cfg_.vocab_size) {
        throw std::out_of_range("token id " + std::to_string(it.token_id) + " outside vocabulary of size " +
                                std::to_string(cfg_.vocab_size));
      }
      refs.push_back({wte_, static_cast<std::size_t>(it.token_id)});
    } else {
      if (!it.source.defined()) throw std::invalid_argument("input item has neither token nor embedding");
      if (it.source.cols() != d || it.row >= it.source.rows()) {
        throw ad::DimensionError("embedding item of shape " + ad::shape_string(it.source.shape()) +
                                 " does not provide a row of width " + std::to_string(d));
      }
      refs.push_back({it.source, it.row});
    }
  }

  ForwardResult<T> out;
  if (opt.capture) out.trace.emplace();
  Tensor<T> x = ad::add(ad::stack_rows<T>(refs), ad::gather_rows(wpe_, std::span<const std::size_t>(in.positions)));
  if (opt.capture) out.trace->layers.push_back(x);

  const std::size_t prefix_len = cache ? cache->length : 0;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    Tensor<T> a = ad::layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor<T> qkv = ad::add_row(ad::matmul(a, b.w_qkv), b.b_qkv);
    ad::AttentionPrefix<T> prefix;
    if (cache && prefix_len > 0) {
      prefix.keys = cache->keys[l];
      prefix.values = cache->values[l];
      prefix.length = prefix_len;
    }
    Tensor<T> att = ad::causal_attention(qkv, cfg_.n_heads, in.layout, prefix);
    if (cache) {
      const T* q = qkv.data().data();
      for (std::size_t r = 0; r < n; ++r) {
        if (in.layout.row_private(r)) continue;
        cache->keys[l].insert(cache->keys[l].end(), q + r * 3 * d + d, q + r * 3 * d + 2 * d);
        cache->values[l].insert(cache->values[l].end(), q + r * 3 * d + 2 * d, q + r * 3 * d + 3 * d);
      }
    }
    x = ad::add(x, ad::add_row(ad::matmul(att, b.w_o), b.b_o));
    Tensor<T> m = ad::layer_norm(x, b.ln2_g, b.ln2_b);
    Tensor<T> h = ad::gelu(ad::add_row(ad::matmul(m, b.w_fc), b.b_fc));
    x = ad::add(x, ad::add_row(ad::matmul(h, b.w_proj), b.b_proj));
    if (opt.capture) out.trace->layers.push_back(x);
  }

  std::size_t appended = 0;
  for (std::size_t r = 0; r < n; ++r) appended += in.layout.row_private(r) ? 0 : 1;
  if (opt.counters) {
    std::uint64_t pairs = 0;
    for (const auto& seg : in.layout.segments) {
      std::uint64_t visible = prefix_len;
      for (std::size_t r = seg.start; r < seg.start + seg.length; ++r) {
        pairs += visible;
        if (!in.layout.row_private(r)) ++visible;
      }
    }
    opt.counters->attention_pairs += pairs;
    opt.counters->mlp_tokens += n;
    opt.counters->forward_calls += 1;
  }
  if (cache) cache->length += appended;

  out.residual = x;
  out.hidden = final_norm(x);
  return out;
}

template <std::floating_point T>
ForwardResult<T> Transformer<T>::forward_mixed(std::span<const InputItem<T>> items, const ForwardOptions<T>& opt,
                                               std::span<const std::uint8_t> is_private) const {
  PackedInput<T> in;
  const std::size_t start = opt.cache ? opt.cache->length : 0;
  in.add_segment(items, is_private, start);
  auto out = forward(in, opt);
  out.logits = logits(out.hidden);
  return out;
}

int argmax(std::span<const float> row) {
  int best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> greedy_generate(const Transformer<float>& model, std::span<const InputItem<float>> prefix,
                                 int stop_token, std::size_t max_len, ForwardCounters* counters) {
  if (prefix.empty()) throw std::invalid_argument("greedy_generate needs a non-empty prefix");
  auto cache = model.make_cache();
  ForwardOptions<float> opt;
  opt.cache = &cache;
  opt.counters = counters;
  const std::size_t V = model.config().vocab_size;
  std::vector<int> out;
  if (max_len == 0) return out;
  auto res = model.forward_mixed(prefix, opt);
  while (true) {
    const auto logits = res.logits.data();
    const int tok = argmax(logits.subspan(logits.size() - V, V));
    if (counters) ++counters->lm_head_rows;
    if (tok == stop_token) break;
    out.push_back(tok);
    if (out.size() >= max_len || cache.length >= model.config().max_positions) break;
    const InputItem<float> next = InputItem<float>::token(tok);
    res = model.forward_mixed(std::span<const InputItem<float>>(&next, 1), opt);
  }
  return out;
}

std::uint64_t parameter_fingerprint(const std::vector<std::pair<std::string, ad::Tensor<float>>>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size_bytes());
  }
  return h;
}

template struct PackedInput<float>;
template struct PackedInput<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace sentlat::nn
