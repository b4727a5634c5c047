#pragma once

// The CT-HGR vision transformer: linear patch embedding, class token,
// learnable 1D positional table, L pre-norm encoder layers with h-head
// self-attention, and a linear head read off the class-token row.
//
// A windowed sample [W x N_ch x N_cv] is tiled into N = W*N_ch/(H*V) patches
// of flattened size H*V*N_cv. The 2D MUAP-image variant (V3) treats its
// [N_ch x N_cv] image as a single-frame window (W = 1) with patch extents
// (1, V), which makes "no patching" at W = 1 fall out of the same code path.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cthgr/autodiff.hpp"
#include "cthgr/common.hpp"
#include "cthgr/dsp.hpp"
#include "cthgr/io.hpp"

namespace cthgr {

struct PatchSpec {
  std::size_t time_extent = 8;   // H, along the window axis
  std::size_t horiz_extent = 4;  // V, along the horizontal-channel axis
};

enum class InputKind { Window3D, MuapImage2D };

inline std::string to_string(InputKind k) {
  return k == InputKind::Window3D ? "window3d" : "muap2d";
}

inline InputKind input_kind_from_string(const std::string& s) {
  if (s == "window3d") return InputKind::Window3D;
  if (s == "muap2d") return InputKind::MuapImage2D;
  throw Error("unknown input kind: " + s);
}

struct ModelConfig {
  std::size_t embed_dim = 64;   // d
  std::size_t heads = 8;        // h
  std::size_t layers = 1;       // L
  std::size_t mlp_hidden = 64;
  std::size_t n_classes = 66;
  PatchSpec patch;
  InputKind input_kind = InputKind::Window3D;
  // input geometry (for MuapImage2D, window_len is 1)
  std::size_t window_len = 64;
  std::size_t n_ch = 4;
  std::size_t n_cv = 8;
  // true: scale attention scores by sqrt(d/h); false: literal sqrt(d)
  bool scale_by_head_dim = true;
  double dropout_rate = 0.0;

  std::size_t patch_dim() const { return patch.time_extent * patch.horiz_extent * n_cv; }
  std::size_t n_patches() const {
    return (window_len * n_ch) / (patch.time_extent * patch.horiz_extent);
  }
  std::size_t seq_len() const { return n_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / heads; }

  void validate() const {
    require(n_classes >= 2, "model: need at least 2 classes");
    require(embed_dim % heads == 0, "model: embed_dim must be divisible by head count");
    require(patch.time_extent >= 1 && patch.horiz_extent >= 1, "model: empty patch");
    require(window_len % patch.time_extent == 0,
            "model: patch time extent must divide the window length");
    require(n_ch % patch.horiz_extent == 0,
            "model: patch horizontal extent must divide the channel columns");
    require(n_patches() >= 1, "model: at least one patch required");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "model: dropout rate in [0,1)");
  }

  nlohmann::json to_json() const {
    return {{"embed_dim", embed_dim},
            {"heads", heads},
            {"layers", layers},
            {"mlp_hidden", mlp_hidden},
            {"n_classes", n_classes},
            {"patch_time", patch.time_extent},
            {"patch_horiz", patch.horiz_extent},
            {"input_kind", to_string(input_kind)},
            {"window_len", window_len},
            {"n_ch", n_ch},
            {"n_cv", n_cv},
            {"scale_by_head_dim", scale_by_head_dim},
            {"dropout_rate", dropout_rate}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    c.patch.time_extent = j.at("patch_time").get<std::size_t>();
    c.patch.horiz_extent = j.at("patch_horiz").get<std::size_t>();
    c.input_kind = input_kind_from_string(j.at("input_kind").get<std::string>());
    c.window_len = j.at("window_len").get<std::size_t>();
    c.n_ch = j.at("n_ch").get<std::size_t>();
    c.n_cv = j.at("n_cv").get<std::size_t>();
    c.scale_by_head_dim = j.at("scale_by_head_dim").get<bool>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.validate();
    return c;
  }
};

// Closed-form learnable-parameter count under the ModelParams convention:
// patch projection without bias, positional table with N+1 rows, class token,
// per layer two LayerNorms + QKV/O projections with bias + two-linear MLP
// with bias, and a biased linear head.
inline std::size_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, m = cfg.mlp_hidden;
  const std::size_t n = cfg.n_patches();
  std::size_t total = cfg.patch_dim() * d;  // E
  total += (n + 1) * d;                      // E_pos
  total += d;                                // class token
  const std::size_t per_layer = 2 * d                  // LN1
                                + 3 * (d * d + d)      // W_Q, W_K, W_V + biases
                                + (d * d + d)          // W_O + bias
                                + 2 * d                // LN2
                                + (d * m + m)          // MLP linear1 + bias
                                + (m * d + d);         // MLP linear2 + bias
  total += cfg.layers * per_layer;
  total += d * cfg.n_classes + cfg.n_classes;  // head
  return total;
}

enum class Preset { V1, V2, V3 };

inline Preset preset_from_string(const std::string& s) {
  if (s == "V1" || s == "v1") return Preset::V1;
  if (s == "V2" || s == "v2") return Preset::V2;
  if (s == "V3" || s == "v3") return Preset::V3;
  throw Error("unknown preset: " + s + " (expected V1, V2 or V3)");
}

// V1: d=64, h=8, L=1, mlp=64, patch (8,4)/(8,8)/(8,16) for 32/64/128 channels.
// V2: d=128, mlp=256, otherwise V1.
// V3: 2D MUAP image input, patch (1, min(8, n_ch)), d=64, h=8, L=1.
inline ModelConfig preset(Preset name, std::size_t channels, std::size_t window_len,
                          std::size_t n_classes = 66) {
  require(channels % 8 == 0 && channels >= 32, "preset: channels must be 32, 64 or 128");
  const std::size_t n_ch = channels / 8;
  ModelConfig cfg;
  cfg.n_classes = n_classes;
  cfg.n_cv = 8;
  cfg.n_ch = n_ch;
  switch (name) {
    case Preset::V1:
    case Preset::V2:
      cfg.embed_dim = name == Preset::V2 ? 128 : 64;
      cfg.mlp_hidden = name == Preset::V2 ? 256 : 64;
      cfg.heads = 8;
      cfg.layers = 1;
      cfg.window_len = window_len;
      cfg.input_kind = InputKind::Window3D;
      if (window_len == 1) {
        cfg.patch = {1, n_ch};  // instantaneous frames need no patching
      } else {
        cfg.patch = {8, n_ch};
      }
      break;
    case Preset::V3:
      cfg.embed_dim = 64;
      cfg.mlp_hidden = 64;
      cfg.heads = 8;
      cfg.layers = 1;
      cfg.window_len = 1;
      cfg.input_kind = InputKind::MuapImage2D;
      cfg.patch = {1, std::min<std::size_t>(8, n_ch)};
      break;
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------
// parameters

template <typename T>
struct EncoderLayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, bq, wk, bk, wv, bv;
  Tensor<T> wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename T>
struct ModelParams {
  Tensor<T> patch_embed;  // E, [P x d], no bias
  Tensor<T> pos_embed;    // E_pos, [(N+1) x d]
  Tensor<T> class_token;  // [1 x d]
  std::vector<EncoderLayerParams<T>> encoder;
  Tensor<T> head_w;  // [d x n_classes]
  Tensor<T> head_b;  // [n_classes]

  // canonical enumeration order; defines the checkpoint blob layout
  std::vector<Tensor<T>*> all() {
    std::vector<Tensor<T>*> out{&patch_embed, &pos_embed, &class_token};
    for (auto& l : encoder) {
      out.push_back(&l.ln1_gain);
      out.push_back(&l.ln1_bias);
      out.push_back(&l.wq);
      out.push_back(&l.bq);
      out.push_back(&l.wk);
      out.push_back(&l.bk);
      out.push_back(&l.wv);
      out.push_back(&l.bv);
      out.push_back(&l.wo);
      out.push_back(&l.bo);
      out.push_back(&l.ln2_gain);
      out.push_back(&l.ln2_bias);
      out.push_back(&l.mlp_w1);
      out.push_back(&l.mlp_b1);
      out.push_back(&l.mlp_w2);
      out.push_back(&l.mlp_b2);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  std::vector<const Tensor<T>*> all() const {
    auto* self = const_cast<ModelParams*>(this);
    std::vector<const Tensor<T>*> out;
    for (auto* t : self->all()) out.push_back(t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto* t : all()) n += t->size();
    return n;
  }

  std::vector<float> to_blob() const {
    std::vector<float> blob;
    blob.reserve(scalar_count());
    for (const auto* t : all())
      for (auto v : t->value()) blob.push_back(static_cast<float>(v));
    return blob;
  }
};

namespace detail {

template <typename T>
inline Tensor<T> trunc_normal(Shape shape, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, sigma);
  std::vector<T> data(numel(shape));
  for (auto& v : data) {
    double x = gauss(rng);
    while (std::abs(x) > 2.0 * sigma) x = gauss(rng);
    v = static_cast<T>(x);
  }
  return Tensor<T>(std::move(shape), std::move(data), true);
}

}  // namespace detail

// Truncated-normal (sigma 0.02) weights, zero biases, unit LayerNorm gains.
template <typename T>
inline ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(seed, 0x0de1000));
  const std::size_t d = cfg.embed_dim, m = cfg.mlp_hidden, s = cfg.seq_len();
  const double sigma = 0.02;
  ModelParams<T> p;
  p.patch_embed = detail::trunc_normal<T>({cfg.patch_dim(), d}, sigma, rng);
  p.pos_embed = detail::trunc_normal<T>({s, d}, sigma, rng);
  p.class_token = detail::trunc_normal<T>({1, d}, sigma, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    EncoderLayerParams<T> lp;
    lp.ln1_gain = Tensor<T>::full({d}, T(1), true);
    lp.ln1_bias = Tensor<T>::zeros({d}, true);
    lp.wq = detail::trunc_normal<T>({d, d}, sigma, rng);
    lp.bq = Tensor<T>::zeros({d}, true);
    lp.wk = detail::trunc_normal<T>({d, d}, sigma, rng);
    lp.bk = Tensor<T>::zeros({d}, true);
    lp.wv = detail::trunc_normal<T>({d, d}, sigma, rng);
    lp.bv = Tensor<T>::zeros({d}, true);
    lp.wo = detail::trunc_normal<T>({d, d}, sigma, rng);
    lp.bo = Tensor<T>::zeros({d}, true);
    lp.ln2_gain = Tensor<T>::full({d}, T(1), true);
    lp.ln2_bias = Tensor<T>::zeros({d}, true);
    lp.mlp_w1 = detail::trunc_normal<T>({d, m}, sigma, rng);
    lp.mlp_b1 = Tensor<T>::zeros({m}, true);
    lp.mlp_w2 = detail::trunc_normal<T>({m, d}, sigma, rng);
    lp.mlp_b2 = Tensor<T>::zeros({d}, true);
    p.encoder.push_back(std::move(lp));
  }
  p.head_w = detail::trunc_normal<T>({d, cfg.n_classes}, sigma, rng);
  p.head_b = Tensor<T>::zeros({cfg.n_classes}, true);
  return p;
}

// ---------------------------------------------------------------------
// patchify

// Deterministic tiling, time-major patch order; each patch is flattened in
// (time, horizontal, vertical) order. Input layout is the WindowBatch layout
// [t][h][v].
template <typename T>
inline std::vector<T> patchify_window(const float* w, const ModelConfig& cfg) {
  const std::size_t H = cfg.patch.time_extent, V = cfg.patch.horiz_extent;
  const std::size_t n_ch = cfg.n_ch, n_cv = cfg.n_cv, W = cfg.window_len;
  std::vector<T> out;
  out.reserve(cfg.n_patches() * cfg.patch_dim());
  for (std::size_t ts = 0; ts < W / H; ++ts)
    for (std::size_t hs = 0; hs < n_ch / V; ++hs)
      for (std::size_t t = 0; t < H; ++t)
        for (std::size_t h = 0; h < V; ++h)
          for (std::size_t v = 0; v < n_cv; ++v)
            out.push_back(static_cast<T>(
                w[((ts * H + t) * n_ch + (hs * V + h)) * n_cv + v]));
  return out;
}

// [n x N x P] constant tensor from a whole batch (optionally an index subset).
template <typename T>
inline Tensor<T> patchify_batch(const WindowBatch& batch, const ModelConfig& cfg,
                                const std::vector<std::size_t>& index = {}) {
  require(batch.window_len == cfg.window_len && batch.n_ch == cfg.n_ch &&
              batch.n_cv == cfg.n_cv,
          "patchify: batch geometry does not match model config");
  const std::size_t n = index.empty() ? batch.count : index.size();
  std::vector<T> data;
  data.reserve(n * cfg.n_patches() * cfg.patch_dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t wi = index.empty() ? i : index[i];
    auto p = patchify_window<T>(batch.window(wi), cfg);
    data.insert(data.end(), p.begin(), p.end());
  }
  return Tensor<T>({n, cfg.n_patches(), cfg.patch_dim()}, std::move(data), false);
}

// ---------------------------------------------------------------------
// forward

template <typename T>
struct ActivationTrace {
  // attention weights per layer, flattened [batch][head][S][S]
  std::vector<std::vector<T>> attention;
  std::vector<Shape> attention_shape;
  // encoder outputs per layer, flattened [batch][S][d]
  std::vector<std::vector<T>> layer_output;
};

// patches: [n x N x P]. Returns logits [n x n_classes].
template <typename T>
inline Tensor<T> forward(const Tensor<T>& patches, const ModelParams<T>& params,
                         const ModelConfig& cfg, bool train = false, std::uint64_t seed = 0,
                         ActivationTrace<T>* trace = nullptr) {
  require(patches.rank() == 3, "forward: patches must be [n x N x P]");
  const std::size_t n = patches.shape()[0];
  require(patches.shape()[1] == cfg.n_patches() && patches.shape()[2] == cfg.patch_dim(),
          "forward: patch shape mismatch against config");
  const std::size_t S = cfg.seq_len(), d = cfg.embed_dim, dh = cfg.head_dim();
  const double denom = cfg.scale_by_head_dim ? std::sqrt(static_cast<double>(dh))
                                             : std::sqrt(static_cast<double>(d));
  const T att_scale = static_cast<T>(1.0 / denom);
  std::uint64_t drop_stream = mix_seed(seed, 0xd20b);

  Tensor<T> embedded = matmul(patches, params.patch_embed);        // [n, N, d]
  Tensor<T> cls = tile_batch(params.class_token, n);               // [n, 1, d]
  Tensor<T> z = concat<T>({cls, embedded}, 1);                     // [n, S, d]
  z = add(z, params.pos_embed);
  z = dropout(z, cfg.dropout_rate, train, drop_stream++);

  for (std::size_t li = 0; li < cfg.layers; ++li) {
    const auto& L = params.encoder[li];
    Tensor<T> ln = layer_norm(z, L.ln1_gain, L.ln1_bias);
    Tensor<T> q = add(matmul(ln, L.wq), L.bq);
    Tensor<T> k = add(matmul(ln, L.wk), L.bk);
    Tensor<T> v = add(matmul(ln, L.wv), L.bv);

    std::vector<Tensor<T>> head_out;
    std::vector<T> attn_trace;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Tensor<T> qh = slice(q, 2, h * dh, dh);
      Tensor<T> kh = slice(k, 2, h * dh, dh);
      Tensor<T> vh = slice(v, 2, h * dh, dh);
      Tensor<T> scores = scale(matmul(qh, transpose(kh)), att_scale);  // [n, S, S]
      Tensor<T> attn = softmax(scores);
      if (trace) attn_trace.insert(attn_trace.end(), attn.value().begin(), attn.value().end());
      head_out.push_back(matmul(attn, vh));  // [n, S, dh]
    }
    if (trace) {
      trace->attention.push_back(std::move(attn_trace));
      trace->attention_shape.push_back({n, cfg.heads, S, S});
    }
    Tensor<T> msa = add(matmul(concat<T>(head_out, 2), L.wo), L.bo);
    msa = dropout(msa, cfg.dropout_rate, train, drop_stream++);
    Tensor<T> z_attn = add(msa, z);  // residual

    Tensor<T> ln2 = layer_norm(z_attn, L.ln2_gain, L.ln2_bias);
    Tensor<T> hidden = gelu(add(matmul(ln2, L.mlp_w1), L.mlp_b1));
    hidden = dropout(hidden, cfg.dropout_rate, train, drop_stream++);
    Tensor<T> mlp_out = add(matmul(hidden, L.mlp_w2), L.mlp_b2);
    mlp_out = dropout(mlp_out, cfg.dropout_rate, train, drop_stream++);
    z = add(mlp_out, z_attn);  // residual

    if (trace) trace->layer_output.push_back(z.value());
  }

  Tensor<T> cls_row = reshape(slice(z, 1, 0, 1), {n, d});
  return add(matmul(cls_row, params.head_w), params.head_b);
}

// ---------------------------------------------------------------------
// positional-embedding cosine similarity

// Entry (i, j) is the cosine between rows i and j of E_pos. Zero-norm rows
// produce 0 entries; `zero_norm_warning` is set when that happens.
template <typename T>
inline std::vector<double> positional_cosine_matrix(const ModelParams<T>& params,
                                                    bool* zero_norm_warning = nullptr) {
  const Shape& s = params.pos_embed.shape();
  const std::size_t S = s[0], d = s[1];
  const auto& e = params.pos_embed.value();
  std::vector<double> norms(S);
  bool warned = false;
  for (std::size_t i = 0; i < S; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double v = static_cast<double>(e[i * d + k]);
      acc += v * v;
    }
    norms[i] = std::sqrt(acc);
    if (norms[i] == 0.0) warned = true;
  }
  std::vector<double> out(S * S, 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k)
        dot += static_cast<double>(e[i * d + k]) * static_cast<double>(e[j * d + k]);
      out[i * S + j] = dot / (norms[i] * norms[j]);
    }
  }
  if (zero_norm_warning) *zero_norm_warning = warned;
  return out;
}

// ---------------------------------------------------------------------
// checkpoints: magic, version, config-JSON header, f32 blob in `all()` order

inline constexpr char kCheckpointMagic[4] = {'C', 'K', 'P', '1'};

template <typename T>
inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams<T>& params) {
  const auto blob = params.to_blob();
  nlohmann::json header = {{"format_version", 1},
                           {"model", cfg.to_json()},
                           {"param_count", blob.size()},
                           {"blob_crc32", crc32_hex(crc32_of(blob.data(), blob.size() * 4))}};
  const std::string hs = header.dump();
  BinaryWriter w;
  w.magic(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(hs.size()));
  w.bytes(hs);
  w.u64(blob.size());
  w.f32_array(blob.data(), blob.size());
  w.save(path);
}

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
  std::string blob_crc32;
};

template <typename T>
inline Checkpoint<T> load_checkpoint(const std::string& path) {
  BinaryReader r = BinaryReader::from_file(path);
  r.expect_magic(kCheckpointMagic, path);
  const std::uint32_t hlen = r.u32();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint header in " + path + ": " + e.what());
  }
  Checkpoint<T> ck;
  ck.config = ModelConfig::from_json(header.at("model"));
  const std::uint64_t n = r.u64();
  require(n == header.at("param_count").get<std::uint64_t>(), "checkpoint count mismatch");
  const auto blob = r.f32_array(n);
  ck.blob_crc32 = crc32_hex(crc32_of(blob.data(), blob.size() * 4));
  require(ck.blob_crc32 == header.at("blob_crc32").get<std::string>(),
          "checkpoint blob checksum failure: " + path);

  ck.params = init_params<T>(ck.config, 0);
  std::size_t off = 0;
  for (auto* t : ck.params.all()) {
    require(off + t->size() <= blob.size(), "checkpoint blob too short");
    auto& vals = t->value_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(blob[off + i]);
    off += t->size();
  }
  require(off == blob.size(), "checkpoint blob size does not match the config");
  return ck;
}

}  // namespace cthgr
