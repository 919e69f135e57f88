#pragma once

// Deterministic decoder-only toy transformer with per-block output capture and
// in-forward lesioning.
//
// Architecture (pre-LayerNorm, GPT-2 style, float32 throughout):
//   x_t   = tok_emb[token_t] + pos_emb[t]
//   block b:
//     x  += Attn(LN1(x))        causal multi-head, scale 1/sqrt(head_dim)
//     x  += MLP(LN2(x))         H -> 4H, tanh-GELU, 4H -> H
//     x[:, j] = 0 for every lesioned unit (b, j)
//     captured[b] = x           the block output fed to block b+1
//   logits = LNf(x_last) . w_out^T + b_out
//
// Weight initialization draws from splitmix64-v1(init_seed), one tensor at a
// time in storage order (see for_each_tensor):
//   embeddings        uniform[-1, 1)
//   weight matrices   uniform[-1/sqrt(fan_in), 1/sqrt(fan_in))
//   LayerNorm gains   1, biases 0 (no draws)
//   b_out             0, except letters A-F which get letter_logit_bias

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "loclesion/binary.hpp"
#include "loclesion/fsutil.hpp"
#include "loclesion/rng.hpp"
#include "loclesion/tokenizer.hpp"
#include "loclesion/unit_mask.hpp"

namespace loclesion::runtime {

struct ModelConfig {
  std::string name = "toy";
  std::uint32_t n_blocks = 4;
  std::uint32_t hidden = 64;
  std::uint32_t n_heads = 4;
  std::uint32_t max_seq = 512;
  std::uint64_t init_seed = 0;
  float letter_logit_bias = 0.0f;
  Vocabulary vocab = toy_vocabulary();

  void validate() const {
    if (n_blocks == 0 || hidden == 0 || n_heads == 0 || max_seq == 0)
      fail(ErrorCode::ConfigError, "n_blocks, hidden, n_heads and max_seq must be positive");
    if (hidden % n_heads != 0)
      fail(ErrorCode::ConfigError, "hidden (" + std::to_string(hidden) + ") not divisible by n_heads (" +
                                       std::to_string(n_heads) + ")");
    if (!std::isfinite(letter_logit_bias)) fail(ErrorCode::ConfigError, "letter_logit_bias must be finite");
    // Vocabulary's constructor already enforces single-token letters/digits.
    if (vocab.size() == 0) fail(ErrorCode::ConfigError, "empty vocabulary");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlockWeights {
  std::vector<float> ln1_g, ln1_b;
  std::vector<float> w_qkv, b_qkv;  // H x 3H, 3H
  std::vector<float> w_o, b_o;      // H x H, H
  std::vector<float> ln2_g, ln2_b;
  std::vector<float> w_fc, b_fc;      // H x 4H, 4H
  std::vector<float> w_proj, b_proj;  // 4H x H, H
};

struct Weights {
  std::vector<float> tok_emb;  // V x H
  std::vector<float> pos_emb;  // max_seq x H
  std::vector<BlockWeights> blocks;
  std::vector<float> lnf_g, lnf_b;
  std::vector<float> w_out;  // V x H
  std::vector<float> b_out;  // V
};

enum class TensorRole { Embedding, Matrix, Gain, Bias, OutputBias };

/// Visits every tensor in storage order with (role, fan_in, expected size, tensor).
template <class W, class F>
void for_each_tensor(W& w, const ModelConfig& c, F&& f) {
  const std::size_t H = c.hidden, V = c.vocab.size(), S = c.max_seq;
  f(TensorRole::Embedding, H, V * H, w.tok_emb);
  f(TensorRole::Embedding, H, S * H, w.pos_emb);
  for (auto& b : w.blocks) {
    f(TensorRole::Gain, H, H, b.ln1_g);
    f(TensorRole::Bias, H, H, b.ln1_b);
    f(TensorRole::Matrix, H, H * 3 * H, b.w_qkv);
    f(TensorRole::Bias, H, 3 * H, b.b_qkv);
    f(TensorRole::Matrix, H, H * H, b.w_o);
    f(TensorRole::Bias, H, H, b.b_o);
    f(TensorRole::Gain, H, H, b.ln2_g);
    f(TensorRole::Bias, H, H, b.ln2_b);
    f(TensorRole::Matrix, H, H * 4 * H, b.w_fc);
    f(TensorRole::Bias, H, 4 * H, b.b_fc);
    f(TensorRole::Matrix, 4 * H, 4 * H * H, b.w_proj);
    f(TensorRole::Bias, H, H, b.b_proj);
  }
  f(TensorRole::Gain, H, H, w.lnf_g);
  f(TensorRole::Bias, H, H, w.lnf_b);
  f(TensorRole::Matrix, H, V * H, w.w_out);
  f(TensorRole::OutputBias, H, V, w.b_out);
}

/// M x L x H captured block outputs, block-major.
struct BlockActivations {
  std::size_t blocks = 0;
  std::size_t length = 0;
  std::size_t hidden = 0;
  std::vector<float> data;

  float at(std::size_t block, std::size_t pos, std::size_t unit) const {
    return data[(block * length + pos) * hidden + unit];
  }
  std::span<const float> row(std::size_t block, std::size_t pos) const {
    return std::span<const float>(data).subspan((block * length + pos) * hidden, hidden);
  }
};

/// Which block-output coordinates to force to zero during a forward pass.
class LesionPlan {
 public:
  static LesionPlan none() { return LesionPlan(); }

  static LesionPlan from_mask(const UnitMask& mask) {
    LesionPlan plan;
    plan.active_ = true;
    plan.blocks_ = mask.blocks;
    plan.hidden_ = mask.hidden;
    plan.zeroed_.assign(mask.blocks, {});
    for (const Unit& u : mask.selected) {
      if (u.block >= mask.blocks || u.index >= mask.hidden)
        fail(ErrorCode::DimMismatch, "mask unit outside its own dimensions");
      plan.zeroed_[u.block].push_back(u.index);
    }
    return plan;
  }

  bool active() const { return active_; }
  std::uint32_t blocks() const { return blocks_; }
  std::uint32_t hidden() const { return hidden_; }
  std::span<const std::uint32_t> zeroed(std::size_t block) const { return zeroed_[block]; }

 private:
  bool active_ = false;
  std::uint32_t blocks_ = 0;
  std::uint32_t hidden_ = 0;
  std::vector<std::vector<std::uint32_t>> zeroed_;
};

struct ForwardResult {
  std::vector<float> logits;  // final position
  BlockActivations activations;
};

namespace detail {

inline void layer_norm(std::span<const float> x, std::span<const float> g, std::span<const float> b,
                       std::span<float> out) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-5));
  const float m = static_cast<float>(mean);
  for (std::size_t k = 0; k < n; ++k) out[k] = (x[k] - m) * inv * g[k] + b[k];
}

/// out[out_dim] = x[in_dim] . W[in_dim x out_dim] + bias
inline void affine(std::span<const float> x, const std::vector<float>& w, const std::vector<float>& bias,
                   std::span<float> out) {
  const std::size_t in_dim = x.size(), out_dim = out.size();
  std::copy(bias.begin(), bias.end(), out.begin());
  for (std::size_t i = 0; i < in_dim; ++i) {
    const float xi = x[i];
    const float* row = w.data() + i * out_dim;
    for (std::size_t j = 0; j < out_dim; ++j) out[j] += xi * row[j];
  }
}

inline float gelu(float x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(kC * (x + 0.044715f * x * x * x)));
}

}  // namespace detail

class Model {
 public:
  /// Builds a model with weights drawn deterministically from config.init_seed.
  static Model create(ModelConfig config) {
    config.validate();
    Model m(std::move(config));
    SplitMix64 rng(m.config_.init_seed);
    for_each_tensor(m.weights_, m.config_,
                    [&](TensorRole role, std::size_t fan_in, std::size_t size, std::vector<float>& t) {
                      t.assign(size, 0.0f);
                      switch (role) {
                        case TensorRole::Embedding:
                          for (float& v : t) v = 2.0f * rng.unit() - 1.0f;
                          break;
                        case TensorRole::Matrix: {
                          const float a = 1.0f / std::sqrt(static_cast<float>(fan_in));
                          for (float& v : t) v = (2.0f * rng.unit() - 1.0f) * a;
                          break;
                        }
                        case TensorRole::Gain: std::fill(t.begin(), t.end(), 1.0f); break;
                        case TensorRole::Bias: break;
                        case TensorRole::OutputBias:
                          for (char c : kAnswerLetters)
                            t[m.config_.vocab.id_or_unk(std::string(1, c))] = m.config_.letter_logit_bias;
                          break;
                      }
                    });
    return m;
  }

  /// Adopts explicit weights (e.g. read from a weights file); sizes are checked.
  static Model from_weights(ModelConfig config, Weights weights) {
    config.validate();
    Model m(std::move(config));
    if (weights.blocks.size() != m.config_.n_blocks)
      fail(ErrorCode::ConfigError, "weights hold " + std::to_string(weights.blocks.size()) + " blocks");
    m.weights_ = std::move(weights);
    for_each_tensor(m.weights_, m.config_, [](TensorRole, std::size_t, std::size_t size, std::vector<float>& t) {
      if (t.size() != size) fail(ErrorCode::ConfigError, "weight tensor has wrong size");
    });
    return m;
  }

  const ModelConfig& config() const { return config_; }
  const Weights& weights() const { return weights_; }
  Weights& mutable_weights() { return weights_; }
  const std::string& id() const { return config_.name; }
  std::uint32_t blocks() const { return config_.n_blocks; }
  std::uint32_t hidden() const { return config_.hidden; }

  std::vector<TokenId> tokenize(std::string_view text) const { return loclesion::tokenize(config_.vocab, text); }
  std::string detokenize(std::span<const TokenId> ids) const { return loclesion::detokenize(config_.vocab, ids); }
  const std::string& token_text(TokenId id) const { return config_.vocab.text(id); }
  TokenId token_id(std::string_view piece) const { return config_.vocab.id_or_unk(piece); }

  ForwardResult forward_collect(std::span<const TokenId> tokens, const LesionPlan& plan) const {
    ForwardResult r;
    r.logits = run(tokens, plan, &r.activations);
    return r;
  }

  /// Greedy single-token generation; ties go to the lowest token id.
  TokenId generate_one(std::span<const TokenId> tokens, const LesionPlan& plan) const {
    const std::vector<float> logits = run(tokens, plan, nullptr);
    std::size_t best = 0;
    for (std::size_t v = 1; v < logits.size(); ++v)
      if (logits[v] > logits[best]) best = v;
    return static_cast<TokenId>(best);
  }

 private:
  explicit Model(ModelConfig config) : config_(std::move(config)) {
    weights_.blocks.resize(config_.n_blocks);
  }

  std::vector<float> run(std::span<const TokenId> tokens, const LesionPlan& plan, BlockActivations* capture) const {
    const std::size_t L = tokens.size(), H = config_.hidden, M = config_.n_blocks, V = config_.vocab.size();
    const std::size_t n_heads = config_.n_heads, hd = H / n_heads;
    if (L == 0) fail(ErrorCode::EmptySequence, "cannot run the model on an empty token sequence");
    if (L > config_.max_seq)
      fail(ErrorCode::SequenceTooLong,
           std::to_string(L) + " tokens exceed max_seq " + std::to_string(config_.max_seq));
    if (plan.active() && (plan.blocks() != M || plan.hidden() != H))
      fail(ErrorCode::DimMismatch, "lesion mask is " + std::to_string(plan.blocks()) + "x" +
                                       std::to_string(plan.hidden()) + ", model is " + std::to_string(M) + "x" +
                                       std::to_string(H));

    std::vector<float> x(L * H), h(L * H), qkv(L * 3 * H), att(L * H), tmp(std::max<std::size_t>(4 * H, L));
    std::vector<float> ff(4 * H), delta(H);
    for (std::size_t t = 0; t < L; ++t) {
      if (tokens[t] >= V) fail(ErrorCode::ConfigError, "token id " + std::to_string(tokens[t]) + " out of range");
      const float* te = weights_.tok_emb.data() + tokens[t] * H;
      const float* pe = weights_.pos_emb.data() + t * H;
      for (std::size_t k = 0; k < H; ++k) x[t * H + k] = te[k] + pe[k];
    }
    if (capture) {
      capture->blocks = M;
      capture->length = L;
      capture->hidden = H;
      capture->data.assign(M * L * H, 0.0f);
    }

    auto rows = [](std::vector<float>& v, std::size_t t, std::size_t width) {
      return std::span<float>(v).subspan(t * width, width);
    };
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

    for (std::size_t b = 0; b < M; ++b) {
      const BlockWeights& bw = weights_.blocks[b];
      for (std::size_t t = 0; t < L; ++t) {
        detail::layer_norm(rows(x, t, H), bw.ln1_g, bw.ln1_b, rows(h, t, H));
        detail::affine(rows(h, t, H), bw.w_qkv, bw.b_qkv, rows(qkv, t, 3 * H));
      }
      for (std::size_t head = 0; head < n_heads; ++head) {
        const std::size_t qo = head * hd, ko = H + head * hd, vo = 2 * H + head * hd;
        for (std::size_t t = 0; t < L; ++t) {
          const float* q = qkv.data() + t * 3 * H + qo;
          float mx = -INFINITY;
          for (std::size_t u = 0; u <= t; ++u) {
            const float* k = qkv.data() + u * 3 * H + ko;
            float s = 0.0f;
            for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
            tmp[u] = s * scale;
            mx = std::max(mx, tmp[u]);
          }
          float denom = 0.0f;
          for (std::size_t u = 0; u <= t; ++u) {
            tmp[u] = std::exp(tmp[u] - mx);
            denom += tmp[u];
          }
          float* o = att.data() + t * H + head * hd;
          std::fill(o, o + hd, 0.0f);
          for (std::size_t u = 0; u <= t; ++u) {
            const float p = tmp[u] / denom;
            const float* v = qkv.data() + u * 3 * H + vo;
            for (std::size_t d = 0; d < hd; ++d) o[d] += p * v[d];
          }
        }
      }
      for (std::size_t t = 0; t < L; ++t) {
        detail::affine(rows(att, t, H), bw.w_o, bw.b_o, delta);
        for (std::size_t k = 0; k < H; ++k) x[t * H + k] += delta[k];
        detail::layer_norm(rows(x, t, H), bw.ln2_g, bw.ln2_b, rows(h, t, H));
        detail::affine(rows(h, t, H), bw.w_fc, bw.b_fc, ff);
        for (float& v : ff) v = detail::gelu(v);
        detail::affine(ff, bw.w_proj, bw.b_proj, delta);
        for (std::size_t k = 0; k < H; ++k) x[t * H + k] += delta[k];
      }
      if (plan.active())
        for (std::uint32_t j : plan.zeroed(b))
          for (std::size_t t = 0; t < L; ++t) x[t * H + j] = 0.0f;
      if (capture) std::copy(x.begin(), x.end(), capture->data.begin() + static_cast<std::ptrdiff_t>(b * L * H));
    }

    std::vector<float> last(H);
    detail::layer_norm(rows(x, L - 1, H), weights_.lnf_g, weights_.lnf_b, last);
    std::vector<float> logits(V);
    for (std::size_t v = 0; v < V; ++v) {
      const float* w = weights_.w_out.data() + v * H;
      float s = weights_.b_out[v];
      for (std::size_t k = 0; k < H; ++k) s += last[k] * w[k];
      logits[v] = s;
    }
    return logits;
  }

  ModelConfig config_;
  Weights weights_;
};

inline Model new_model(ModelConfig config) { return Model::create(std::move(config)); }

/// A model whose logits ignore the prompt and always peak at `token`.
inline Model rigged_model(ModelConfig config, std::string_view token) {
  Model m = Model::create(std::move(config));
  Weights& w = m.mutable_weights();
  std::fill(w.w_out.begin(), w.w_out.end(), 0.0f);
  std::fill(w.b_out.begin(), w.b_out.end(), 0.0f);
  w.b_out[m.token_id(token)] = 1.0f;
  return m;
}

// ---------------------------------------------------------------------------
// Weights file: "LLMW", version u32, n_blocks u32, hidden u32, n_heads u32,
// vocab_size u32, max_seq u32, init_seed u64, letter_logit_bias f32, name
// (u32 length + UTF-8), then every tensor in for_each_tensor order as
// little-endian f32. The vocabulary lives next to it in <stem>.vocab.json.

inline constexpr std::string_view kWeightsMagic = "LLMW";
inline constexpr std::uint32_t kWeightsVersion = 1;

inline std::filesystem::path vocab_path_for(const std::filesystem::path& weights_path) {
  std::filesystem::path p = weights_path;
  p.replace_extension(".vocab.json");
  return p;
}

inline std::string encode_weights(const Model& model) {
  const ModelConfig& c = model.config();
  binary::Writer w;
  w.bytes(kWeightsMagic);
  w.u32(kWeightsVersion);
  w.u32(c.n_blocks);
  w.u32(c.hidden);
  w.u32(c.n_heads);
  w.u32(static_cast<std::uint32_t>(c.vocab.size()));
  w.u32(c.max_seq);
  w.u64(c.init_seed);
  w.f32(c.letter_logit_bias);
  w.str(c.name);
  for_each_tensor(model.weights(), c,
                  [&](TensorRole, std::size_t, std::size_t, const std::vector<float>& t) { w.f32s(t); });
  return std::move(w).data();
}

inline std::string encode_vocab(const Vocabulary& vocab) {
  nlohmann::json j;
  j["version"] = 1;
  j["tokens"] = vocab.tokens();
  return j.dump(1) + "\n";
}

inline void save_weights(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(model));
  write_file_atomic(vocab_path_for(path), encode_vocab(model.config().vocab));
}

inline Vocabulary decode_vocab(std::string_view bytes) {
  nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
    fail(ErrorCode::SchemaError, "vocabulary JSON must be an object with a 'tokens' array");
  std::vector<std::string> tokens;
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) fail(ErrorCode::SchemaError, "vocabulary tokens must be strings");
    tokens.push_back(t.get<std::string>());
  }
  return Vocabulary(std::move(tokens));
}

/// Decodes a weights file. When `expected` is given, its shape fields must
/// match the header exactly.
inline Model decode_weights(std::string_view bytes, Vocabulary vocab, const ModelConfig* expected = nullptr) {
  binary::Reader r(bytes);
  if (r.remaining() < 4 || r.bytes(4) != kWeightsMagic) fail(ErrorCode::BadMagic, "not an LLMW weights file");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    fail(ErrorCode::UnsupportedVersion, "weights version " + std::to_string(version));
  ModelConfig c;
  c.n_blocks = r.u32();
  c.hidden = r.u32();
  c.n_heads = r.u32();
  const std::uint32_t vocab_size = r.u32();
  c.max_seq = r.u32();
  c.init_seed = r.u64();
  c.letter_logit_bias = r.f32();
  c.name = r.str();
  if (vocab_size != vocab.size())
    fail(ErrorCode::ConfigError, "weights expect " + std::to_string(vocab_size) + " tokens, vocabulary has " +
                                     std::to_string(vocab.size()));
  c.vocab = std::move(vocab);
  if (expected) {
    if (expected->n_blocks != c.n_blocks || expected->hidden != c.hidden || expected->n_heads != c.n_heads ||
        expected->max_seq != c.max_seq || expected->vocab.size() != c.vocab.size() ||
        expected->init_seed != c.init_seed)
      fail(ErrorCode::ConfigError, "weights header does not match the requested model config");
  }
  c.validate();
  Weights w;
  w.blocks.resize(c.n_blocks);
  for_each_tensor(w, c, [&](TensorRole, std::size_t, std::size_t size, std::vector<float>& t) {
    r.need_items(size, 4);
    t.resize(size);
    for (float& v : t) v = r.f32();
  });
  if (!r.done()) fail(ErrorCode::InvariantViolation, "trailing bytes after weights");
  return Model::from_weights(std::move(c), std::move(w));
}

inline Model load_weights(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  const std::string bytes = read_file(path);
  return decode_weights(bytes, decode_vocab(read_file(vocab_path_for(path))), expected);
}

}  // namespace loclesion::runtime
