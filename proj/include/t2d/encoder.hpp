#pragma once

#include <atomic>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "t2d/checkpoint.hpp"
#include "t2d/common.hpp"
#include "t2d/tokenizer.hpp"

namespace t2d {

// Weight matrix with an optional low-rank delta: W_eff = base + scale * a * b.
// `a` is in x r and `b` is r x out; an empty `a` means "not adapted".
struct AdaptedWeight {
  Matrix base;
  Matrix a;
  Matrix b;
  double scale = 1.0;

  bool adapted() const { return a.size() > 0; }
  Matrix effective() const { return adapted() ? Matrix(base + scale * a * b) : base; }

  Matrix apply(const Matrix& x) const {
    Matrix y = x * base;
    if (adapted()) y.noalias() += scale * ((x * a) * b);
    return y;
  }
};

// One block: causal multi-head self-attention and a GELU feed-forward, each
// wrapped in a residual connection.
struct EncoderLayer {
  AdaptedWeight query, key, value, output, ffn_in, ffn_out;
  Matrix ffn_in_bias;   // 1 x ffn_dim
  Matrix ffn_out_bias;  // 1 x dim
};

enum class AdapterTarget { kQuery, kKey, kValue, kOutput, kFfnIn, kFfnOut };

inline const char* target_name(AdapterTarget t) {
  switch (t) {
    case AdapterTarget::kQuery: return "query";
    case AdapterTarget::kKey: return "key";
    case AdapterTarget::kValue: return "value";
    case AdapterTarget::kOutput: return "output";
    case AdapterTarget::kFfnIn: return "ffn_in";
    case AdapterTarget::kFfnOut: return "ffn_out";
  }
  return "?";
}

inline AdapterTarget parse_target(const std::string& s) {
  for (auto t : {AdapterTarget::kQuery, AdapterTarget::kKey, AdapterTarget::kValue,
                 AdapterTarget::kOutput, AdapterTarget::kFfnIn, AdapterTarget::kFfnOut}) {
    if (s == target_name(t)) return t;
  }
  throw ValidationError("unknown adapter target '" + s + "'");
}

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 200;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ffn_dim = 0;    // 0 selects 4 * dim
  std::size_t max_len = 512;  // positional capacity, not the prompt cap
  std::size_t adapter_rank = 8;
  double adapter_alpha = 16.0;
  std::vector<AdapterTarget> adapter_targets{
      AdapterTarget::kQuery, AdapterTarget::kKey,   AdapterTarget::kValue,
      AdapterTarget::kOutput, AdapterTarget::kFfnIn, AdapterTarget::kFfnOut};
  bool base_trainable = false;
  // Small input scale keeps the initial hidden state near the norm of the
  // behavior embeddings it is guided toward.
  double embedding_std = 0.1;
  double position_scale = 0.1;  // multiplies the sinusoidal table
  std::uint64_t seed = 0;

  std::size_t ffn() const { return ffn_dim == 0 ? 4 * dim : ffn_dim; }

  void validate() const {
    if (vocab_size == 0) throw ContractViolation("encoder vocab_size must be positive");
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw ContractViolation("encoder dim must be a positive multiple of heads");
    }
    if (layers == 0) throw ContractViolation("encoder needs at least one layer");
    if (max_len == 0) throw ContractViolation("max_len must be positive");
    if (adapter_rank == 0 || adapter_rank >= dim) {
      throw ContractViolation("adapter rank must satisfy 1 <= r < dim");
    }
  }

  bool targets(AdapterTarget t) const {
    return std::find(adapter_targets.begin(), adapter_targets.end(), t) != adapter_targets.end();
  }

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "vocab_size=" << vocab_size << "\ndim=" << dim << "\nlayers=" << layers
       << "\nheads=" << heads << "\nffn_dim=" << ffn() << "\nmax_len=" << max_len
       << "\nadapter_rank=" << adapter_rank << "\nadapter_alpha=" << adapter_alpha
       << "\nbase_trainable=" << (base_trainable ? 1 : 0) << "\nembedding_std=" << embedding_std
       << "\nposition_scale=" << position_scale
       << "\nseed=" << seed << "\nadapter_targets=";
    for (std::size_t k = 0; k < adapter_targets.size(); ++k) {
      os << (k ? "," : "") << target_name(adapter_targets[k]);
    }
    os << "\n";
    return os.str();
  }

  static EncoderConfig from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw IntegrityError(std::string("encoder config lacks ") + k);
      return it->second;
    };
    EncoderConfig c;
    c.vocab_size = std::stoul(get("vocab_size"));
    c.dim = std::stoul(get("dim"));
    c.layers = std::stoul(get("layers"));
    c.heads = std::stoul(get("heads"));
    c.ffn_dim = std::stoul(get("ffn_dim"));
    c.max_len = std::stoul(get("max_len"));
    c.adapter_rank = std::stoul(get("adapter_rank"));
    c.adapter_alpha = std::stod(get("adapter_alpha"));
    c.base_trainable = get("base_trainable") == "1";
    c.embedding_std = std::stod(get("embedding_std"));
    c.position_scale = std::stod(get("position_scale"));
    c.seed = std::stoull(get("seed"));
    c.adapter_targets.clear();
    std::istringstream ts(get("adapter_targets"));
    std::string t;
    while (std::getline(ts, t, ',')) {
      if (!t.empty()) c.adapter_targets.push_back(parse_target(t));
    }
    return c;
  }
};

// Fixed sinusoidal table, max_len x dim.
inline Matrix sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  Matrix p(max_len, dim);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / dim);
      p(pos, j) = (j % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return p;
}

class EncoderModel {
 public:
  EncoderConfig config;
  Matrix token_embedding;  // vocab x dim
  Matrix positions;        // max_len x dim, fixed
  std::vector<EncoderLayer> layers;

  EncoderModel() = default;
  EncoderModel(const EncoderModel& o)
      : config(o.config), token_embedding(o.token_embedding), positions(o.positions),
        layers(o.layers), forward_passes_(o.forward_passes_.load()) {}
  EncoderModel& operator=(const EncoderModel& o) {
    config = o.config;
    token_embedding = o.token_embedding;
    positions = o.positions;
    layers = o.layers;
    forward_passes_.store(o.forward_passes_.load());
    return *this;
  }

  // Random base weights; adapters start with a ~ N(0, 1/in) and b = 0, so the
  // effective weights equal the base weights until the first update.
  static EncoderModel create(const EncoderConfig& cfg) {
    cfg.validate();
    EncoderModel m;
    m.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    auto normal = [&](std::size_t r, std::size_t c, double sd) {
      std::normal_distribution<double> d(0.0, sd);
      Matrix x(r, c);
      for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = d(rng);
      return x;
    };
    const auto d = cfg.dim, f = cfg.ffn();
    m.token_embedding = normal(cfg.vocab_size, d, cfg.embedding_std);
    m.positions = cfg.position_scale * sinusoidal_positions(cfg.max_len, d);
    const double scale = cfg.adapter_alpha / static_cast<double>(cfg.adapter_rank);
    auto weight = [&](std::size_t in, std::size_t out, AdapterTarget t) {
      AdaptedWeight w;
      w.base = normal(in, out, 1.0 / std::sqrt(static_cast<double>(in)));
      if (cfg.targets(t)) {
        w.a = normal(in, cfg.adapter_rank, 1.0 / std::sqrt(static_cast<double>(in)));
        w.b = Matrix::Zero(cfg.adapter_rank, out);
        w.scale = scale;
      }
      return w;
    };
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      EncoderLayer layer;
      layer.query = weight(d, d, AdapterTarget::kQuery);
      layer.key = weight(d, d, AdapterTarget::kKey);
      layer.value = weight(d, d, AdapterTarget::kValue);
      layer.output = weight(d, d, AdapterTarget::kOutput);
      layer.ffn_in = weight(d, f, AdapterTarget::kFfnIn);
      layer.ffn_out = weight(f, d, AdapterTarget::kFfnOut);
      layer.ffn_in_bias = Matrix::Zero(1, f);
      layer.ffn_out_bias = Matrix::Zero(1, d);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  std::uint64_t forward_passes() const { return forward_passes_.load(); }
  void reset_forward_passes() { forward_passes_.store(0); }
  void count_forward() const { forward_passes_.fetch_add(1, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> forward_passes_{0};
};

// Visits parameters in a fixed order. Works on a model's layers and on a
// gradient buffer of the same shape, so the two sequences line up.
template <typename Fn>
void visit_layer_params(std::vector<EncoderLayer>& layers, Matrix& token_embedding,
                        bool adapters, bool base, Fn&& fn) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    std::pair<const char*, AdaptedWeight*> ws[] = {
        {"query", &L.query},   {"key", &L.key},       {"value", &L.value},
        {"output", &L.output}, {"ffn_in", &L.ffn_in}, {"ffn_out", &L.ffn_out}};
    for (auto& [name, w] : ws) {
      if (adapters && w->adapted()) {
        fn(p + name + ".lora_a", w->a);
        fn(p + name + ".lora_b", w->b);
      }
      if (base) fn(p + name, w->base);
    }
    if (base) {
      fn(p + "ffn_in_bias", L.ffn_in_bias);
      fn(p + "ffn_out_bias", L.ffn_out_bias);
    }
  }
  if (base) fn(std::string("token_embedding"), token_embedding);
}

struct ParameterHandle {
  std::string name;
  Matrix* value = nullptr;
};

// Adapter factors only, unless the config opts into training the base too.
inline std::vector<ParameterHandle> trainable_parameters(EncoderModel& model) {
  std::vector<ParameterHandle> out;
  visit_layer_params(model.layers, model.token_embedding, true, model.config.base_trainable,
                     [&](const std::string& n, Matrix& m) { out.push_back({n, &m}); });
  return out;
}

// Gradient buffer shaped like the trainable parameters of a model.
struct EncoderGrads {
  std::vector<EncoderLayer> layers;
  Matrix token_embedding;

  static EncoderGrads zeros_like(const EncoderModel& m) {
    EncoderGrads g;
    g.layers = m.layers;
    g.token_embedding = Matrix::Zero(m.token_embedding.rows(), m.token_embedding.cols());
    visit_layer_params(g.layers, g.token_embedding, true, true,
                       [](const std::string&, Matrix& x) { x.setZero(); });
    return g;
  }

  std::vector<Matrix*> trainable(bool base) {
    std::vector<Matrix*> out;
    visit_layer_params(layers, token_embedding, true, base,
                       [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
};

// Activations kept by a forward pass for the backward pass.
struct ForwardCache {
  struct Layer {
    Matrix input;      // L x d
    Matrix q, k, v;    // L x d
    std::vector<Matrix> attn;  // per head, L x L
    Matrix context;    // L x d
    Matrix mid;        // L x d, after the attention residual
    Matrix pre_act;    // L x f
    Matrix act;        // L x f
  };
  std::vector<TokenId> tokens;
  std::vector<Layer> layers;
  Matrix output;  // L x d
};

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Backward of y = x * W_eff. Accumulates parameter gradients and returns dx.
inline Matrix linear_backward(const AdaptedWeight& w, const Matrix& x, const Matrix& dy,
                              AdaptedWeight& g, bool base_grad) {
  if (base_grad) g.base.noalias() += x.transpose() * dy;
  Matrix dx = dy * w.base.transpose();
  if (w.adapted()) {
    const Matrix t = dy * w.b.transpose();  // L x r
    g.a.noalias() += w.scale * (x.transpose() * t);
    g.b.noalias() += w.scale * ((x * w.a).transpose() * dy);
    dx.noalias() += w.scale * (t * w.a.transpose());
  }
  return dx;
}

}  // namespace detail

inline void check_tokens(const EncoderModel& model, const std::vector<TokenId>& tokens) {
  if (tokens.empty()) throw ContractViolation("empty token sequence");
  if (tokens.size() > model.config.max_len) {
    throw ContractViolation("sequence of " + std::to_string(tokens.size()) +
                            " tokens exceeds encoder max_len " +
                            std::to_string(model.config.max_len));
  }
  for (auto t : tokens) {
    if (t >= model.config.vocab_size) throw ContractViolation("token id out of vocabulary");
  }
}

// Full forward pass over all positions. `cache` may be null at inference.
inline Matrix forward_all(const EncoderModel& model, const std::vector<TokenId>& tokens,
                          ForwardCache* cache) {
  check_tokens(model, tokens);
  model.count_forward();
  const auto L = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(model.config.dim);
  const auto H = static_cast<Eigen::Index>(model.config.heads);
  const auto dh = d / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x(L, d);
  for (Eigen::Index t = 0; t < L; ++t) {
    x.row(t) = model.token_embedding.row(tokens[t]) + model.positions.row(t);
  }
  if (cache) {
    cache->tokens = tokens;
    cache->layers.clear();
  }

  for (const auto& layer : model.layers) {
    Matrix q = layer.query.apply(x);
    Matrix k = layer.key.apply(x);
    Matrix v = layer.value.apply(x);
    Matrix ctx(L, d);
    std::vector<Matrix> attn;
    for (Eigen::Index h = 0; h < H; ++h) {
      Matrix s = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
      s *= inv_sqrt_dh;
      // Causal softmax: position t sees 0..t. Row max is subtracted first.
      for (Eigen::Index t = 0; t < L; ++t) {
        const double mx = s.row(t).head(t + 1).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j <= t; ++j) {
          s(t, j) = std::exp(s(t, j) - mx);
          z += s(t, j);
        }
        for (Eigen::Index j = 0; j <= t; ++j) s(t, j) /= z;
        for (Eigen::Index j = t + 1; j < L; ++j) s(t, j) = 0.0;
      }
      ctx.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
      if (cache) attn.push_back(std::move(s));
    }
    Matrix mid = x + layer.output.apply(ctx);
    Matrix pre = layer.ffn_in.apply(mid);
    pre.rowwise() += layer.ffn_in_bias.row(0);
    Matrix act = pre.unaryExpr([](double z) { return detail::gelu(z); });
    Matrix out = mid + layer.ffn_out.apply(act);
    out.rowwise() += layer.ffn_out_bias.row(0);
    if (cache) {
      ForwardCache::Layer c;
      c.input = std::move(x);
      c.q = std::move(q);
      c.k = std::move(k);
      c.v = std::move(v);
      c.attn = std::move(attn);
      c.context = std::move(ctx);
      c.mid = std::move(mid);
      c.pre_act = std::move(pre);
      c.act = std::move(act);
      cache->layers.push_back(std::move(c));
    }
    x = std::move(out);
  }
  if (cache) cache->output = x;
  return x;
}

// Final layer, last position.
inline Vector encode(const EncoderModel& model, const std::vector<TokenId>& tokens,
                     ForwardCache* cache = nullptr) {
  const Matrix all = forward_all(model, tokens, cache);
  return all.row(all.rows() - 1).transpose();
}

inline Vector encode(const EncoderModel& model, const TokenSequence& seq,
                     ForwardCache* cache = nullptr) {
  return encode(model, seq.tokens, cache);
}

// Backpropagates d(loss)/d(h) for h = encode(...) into `grads`.
inline void encode_backward(const EncoderModel& model, const ForwardCache& cache,
                            const Vector& d_hidden, EncoderGrads& grads) {
  const auto L = static_cast<Eigen::Index>(cache.tokens.size());
  const auto d = static_cast<Eigen::Index>(model.config.dim);
  const auto H = static_cast<Eigen::Index>(model.config.heads);
  const auto dh = d / H;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool base = model.config.base_trainable;

  Matrix dx = Matrix::Zero(L, d);
  dx.row(L - 1) = d_hidden.transpose();

  for (auto l = static_cast<std::ptrdiff_t>(model.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = model.layers[l];
    const auto& c = cache.layers[l];
    auto& g = grads.layers[l];

    // out = mid + act * W2 + b2
    if (base) g.ffn_out_bias.row(0) += dx.colwise().sum();
    Matrix d_act = detail::linear_backward(layer.ffn_out, c.act, dx, g.ffn_out, base);
    Matrix d_pre = d_act.cwiseProduct(c.pre_act.unaryExpr([](double z) {
      return detail::gelu_grad(z);
    }));
    if (base) g.ffn_in_bias.row(0) += d_pre.colwise().sum();
    Matrix d_mid = dx + detail::linear_backward(layer.ffn_in, c.mid, d_pre, g.ffn_in, base);

    // mid = input + ctx * Wo
    Matrix d_ctx = detail::linear_backward(layer.output, c.context, d_mid, g.output, base);
    Matrix dq = Matrix::Zero(L, d), dk = Matrix::Zero(L, d), dv = Matrix::Zero(L, d);
    for (Eigen::Index h = 0; h < H; ++h) {
      const Matrix& p = c.attn[h];
      const Matrix d_ctx_h = d_ctx.middleCols(h * dh, dh);
      Matrix dp = d_ctx_h * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() += p.transpose() * d_ctx_h;
      // softmax backward per row; masked entries have p = 0
      Matrix ds(L, L);
      for (Eigen::Index t = 0; t < L; ++t) {
        const double dot = dp.row(t).dot(p.row(t));
        ds.row(t) = p.row(t).cwiseProduct((dp.row(t).array() - dot).matrix());
      }
      ds *= inv_sqrt_dh;
      dq.middleCols(h * dh, dh).noalias() += ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() += ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    Matrix d_in = d_mid;
    d_in += detail::linear_backward(layer.query, c.input, dq, g.query, base);
    d_in += detail::linear_backward(layer.key, c.input, dk, g.key, base);
    d_in += detail::linear_backward(layer.value, c.input, dv, g.value, base);
    dx = std::move(d_in);
  }
  if (base) {
    for (Eigen::Index t = 0; t < L; ++t) grads.token_embedding.row(cache.tokens[t]) += dx.row(t);
  }
}

// ---------------------------------------------------------------------------
// Prompts

inline constexpr std::string_view kPromptPrefix =
    "Assuming you are a recommendation expert. An item has the following content";
inline constexpr std::string_view kPromptSuffix =
    ", please predict potential users for this item.";

inline std::vector<std::string> prompt_template_texts() {
  return {std::string(kPromptPrefix), std::string(kPromptSuffix)};
}

// Template tokens around the content slot. Content is truncated to fit
// `max_len`; empty content becomes a single UNK in the slot.
inline TokenSequence build_slotted_prompt(const Tokenizer& tok, std::string_view prefix,
                                          std::string_view slot, std::string_view suffix,
                                          std::size_t max_len) {
  const auto pre = tok.ids(prefix);
  const auto post = tok.ids(suffix);
  auto body = tok.ids(slot);
  TokenSequence seq;
  if (body.empty()) {
    body.push_back(Tokenizer::kUnk);
    seq.empty_input = true;
  }
  if (pre.size() + post.size() + 1 > max_len) {
    throw ContractViolation("prompt template does not fit in max_len");
  }
  const auto room = max_len - pre.size() - post.size();
  if (body.size() > room) {
    body.resize(room);
    seq.truncated = true;
  }
  seq.tokens = pre;
  seq.tokens.insert(seq.tokens.end(), body.begin(), body.end());
  seq.tokens.insert(seq.tokens.end(), post.begin(), post.end());
  return seq;
}

inline TokenSequence build_prompt(const Tokenizer& tok, std::string_view content,
                                  std::size_t max_len = 128) {
  return build_slotted_prompt(tok, kPromptPrefix, content, kPromptSuffix, max_len);
}

// ---------------------------------------------------------------------------
// Checkpoint

inline Envelope encoder_envelope(const EncoderModel& model, const Tokenizer& tok) {
  Envelope env;
  env.kind = ArtifactKind::kEncoder;
  env.dim = static_cast<std::uint32_t>(model.config.dim);
  env.seed = model.config.seed;
  env.add_bytes("config", model.config.to_text());
  std::string words;
  for (const auto& w : tok.words()) words += w + "\n";
  env.add_bytes("tokenizer", words);
  auto& m = const_cast<EncoderModel&>(model);  // visitor needs non-const refs; read only
  visit_layer_params(m.layers, m.token_embedding, true, true,
                     [&](const std::string& n, Matrix& x) { env.add_matrix(n, x); });
  return env;
}

struct LoadedEncoder {
  EncoderModel model;
  Tokenizer tokenizer;
};

inline LoadedEncoder encoder_from_envelope(const Envelope& env) {
  if (env.kind != ArtifactKind::kEncoder) throw IntegrityError("not an encoder checkpoint");
  LoadedEncoder out;
  auto cfg = EncoderConfig::from_text(env.section("config").bytes);
  out.model = EncoderModel::create(cfg);
  visit_layer_params(out.model.layers, out.model.token_embedding, true, true,
                     [&](const std::string& n, Matrix& x) {
                       Matrix loaded = env.section(n).matrix();
                       if (loaded.rows() != x.rows() || loaded.cols() != x.cols()) {
                         throw IntegrityError("section " + n + " has wrong shape");
                       }
                       x = std::move(loaded);
                     });
  std::vector<std::string> words;
  std::istringstream is(env.section("tokenizer").bytes);
  std::string w;
  while (std::getline(is, w)) words.push_back(w);
  out.tokenizer = Tokenizer::from_words(words);
  return out;
}

}  // namespace t2d
