// Copyright 2026 The raptr Authors
// SPDX-License-Identifier: Apache-2.0

// The end-to-end network.
//
//   radar stack -> toy backbone (shared across views) -> embeddings
//     -> cross-view encoder -> pose decoder (N queries, reference poses)
//     -> joint decoder (K queries per selected subject) -> world poses
//
// Reference coordinates are normalized radar-frame (x, y, z) in (0, 1).
// Feature maps of both views are stacked row-wise: S horizontal levels
// (rows = x, cols = z), then S vertical levels (rows = y, cols = z).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "raptr/attention.hpp"
#include "raptr/geometry.hpp"
#include "raptr/radar_frames.hpp"
#include "raptr/self_attention.hpp"
#include "raptr/view_mask.hpp"

namespace raptr {

struct ModelConfig {
  std::size_t frames = 2;  // T
  std::size_t width = 32, height = 32, depth = 40;
  std::size_t scales = 2;  // S
  std::size_t d = 32;
  std::size_t heads = 4;  // M
  std::size_t enc_layers = 2, pose_layers = 2, joint_layers = 3;
  std::size_t queries = 4;  // N
  std::size_t joints = 14;  // K
  std::size_t enc_offsets = 4;
  std::size_t joint_offsets = 4;
  std::size_t ffn = 64;
  AttentionVariant attention = AttentionVariant::pseudo3d;
  ViewMaskMode view_mask = ViewMaskMode::both;
  std::size_t mask_hidden = 16;
  double offset_radius = 0.02;  // initial sampling pattern radius, normalized units
  SceneExtents extents;

  std::size_t pose_offsets() const { return joints; }

  void validate() const {
    require_config(frames > 0 && width > 0 && height > 0 && depth > 0, "map extents must be positive");
    require_config(scales > 0, "at least one scale is required");
    require_config(d > 0 && heads > 0 && d % heads == 0,
                   "feature width d=" + std::to_string(d) + " is not divisible by M=" + std::to_string(heads));
    require_config(queries > 0 && joints > 0, "query and joint counts must be positive");
    require_config(enc_offsets > 0 && joint_offsets > 0 && ffn > 0, "offset counts and FFN width must be positive");
    require_config(attention == AttentionVariant::pseudo3d || view_mask == ViewMaskMode::both,
                   "view masks apply to the pseudo-3D variant only");
    extents.validate();
  }

  LevelShape level(std::size_t view, std::size_t s) const {
    std::size_t r = view == 0 ? width : height, c = depth;
    for (std::size_t i = 0; i <= s; ++i) {
      r = (r + 1) / 2;
      c = (c + 1) / 2;
    }
    return {r, c};
  }
  std::vector<LevelShape> levels() const {
    std::vector<LevelShape> out;
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t s = 0; s < scales; ++s) out.push_back(level(v, s));
    return out;
  }

  DeformAttnDims encoder_dims() const { return {d, heads, scales, enc_offsets, 1, AttentionVariant::pseudo3d, true}; }
  DeformAttnDims pose_dims() const { return {d, heads, scales, pose_offsets(), joints, attention}; }
  DeformAttnDims joint_dims() const { return {d, heads, scales, joint_offsets, 1, attention}; }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"frames", c.frames},
          {"width", c.width},
          {"height", c.height},
          {"depth", c.depth},
          {"scales", c.scales},
          {"d", c.d},
          {"heads", c.heads},
          {"enc_layers", c.enc_layers},
          {"pose_layers", c.pose_layers},
          {"joint_layers", c.joint_layers},
          {"queries", c.queries},
          {"joints", c.joints},
          {"enc_offsets", c.enc_offsets},
          {"joint_offsets", c.joint_offsets},
          {"ffn", c.ffn},
          {"attention", to_string(c.attention)},
          {"view_mask", to_string(c.view_mask)},
          {"mask_hidden", c.mask_hidden},
          {"offset_radius", c.offset_radius},
          {"extents", to_json(c.extents)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
  };
  get("frames", c.frames);
  get("width", c.width);
  get("height", c.height);
  get("depth", c.depth);
  get("scales", c.scales);
  get("d", c.d);
  get("heads", c.heads);
  get("enc_layers", c.enc_layers);
  get("pose_layers", c.pose_layers);
  get("joint_layers", c.joint_layers);
  get("queries", c.queries);
  get("joints", c.joints);
  get("enc_offsets", c.enc_offsets);
  get("joint_offsets", c.joint_offsets);
  get("ffn", c.ffn);
  get("mask_hidden", c.mask_hidden);
  get("offset_radius", c.offset_radius);
  if (j.contains("attention")) c.attention = attention_variant_from_string(j.at("attention"));
  if (j.contains("view_mask")) c.view_mask = view_mask_mode_from_string(j.at("view_mask"));
  if (j.contains("extents")) c.extents = extents_from_json(j.at("extents"));
  c.validate();
  return c;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

inline std::string config_hash(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

// ---------------------------------------------------------------------------

/// Fixed 2D sinusoidal embedding of normalized (row, col) pixel centers -> [rows*cols x d].
inline Tensor sinusoidal_embedding(std::size_t rows, std::size_t cols, std::size_t d) {
  Tensor pe(Shape{rows * cols, d});
  const std::size_t half = d / 2;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double u = (static_cast<double>(r) + 0.5) / static_cast<double>(rows);
      const double v = (static_cast<double>(c) + 0.5) / static_cast<double>(cols);
      for (std::size_t j = 0; j < d; ++j) {
        const bool first = j < half;
        const std::size_t k = first ? j : j - half;
        const std::size_t n = first ? std::max<std::size_t>(half, 1) : std::max<std::size_t>(d - half, 1);
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (k / 2)) / static_cast<double>(n));
        const double x = 2.0 * M_PI * (first ? u : v) * freq;
        pe(r * cols + c, j) = k % 2 == 0 ? std::sin(x) : std::cos(x);
      }
    }
  return pe;
}

/// Normalized (row, col) of every pixel center of the given levels, stacked -> [sum rows*cols x 2].
inline Tensor pixel_centers(const std::vector<LevelShape>& levels) {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.size();
  Tensor out(Shape{n, 2});
  std::size_t at = 0;
  for (const auto& l : levels)
    for (std::size_t r = 0; r < l.rows; ++r)
      for (std::size_t c = 0; c < l.cols; ++c, ++at) {
        out(at, 0) = (static_cast<double>(r) + 0.5) / static_cast<double>(l.rows);
        out(at, 1) = (static_cast<double>(c) + 0.5) / static_cast<double>(l.cols);
      }
  return out;
}

struct EncodedScene {
  std::vector<LevelShape> levels;  // 2S: horizontal levels, then vertical
  std::vector<Var> backbone;       // 2S raw backbone outputs, same order
  Var hor, ver;                    // encoder output per view, [sum rows*cols x d]
  Var maps;                        // hor stacked over ver
};

struct PoseDecoderOut {
  std::vector<Var> refs;    // L_pose + 1 entries, [N x 3K]; refs[0] is the query-MLP initialization
  std::vector<Var> deltas;  // L_pose entries, [N x 3K]
  Var queries;              // final [N x d]
  Var conf_logits;          // [N]
  Var conf;                 // [N]
};

struct JointDecoderOut {
  std::vector<std::size_t> subjects;  // pose-query index per refined subject
  std::vector<Var> refs;              // L_joint + 1 entries, [N' K x 3]; refs[0] is the selected pose
  std::vector<Var> deltas;            // L_joint entries
  bool empty() const { return subjects.empty(); }
};

struct ForwardOptions {
  Rng* rng = nullptr;  // draws for the random view-mask pattern
  // Explicit subject selection (training: matched queries); otherwise confidence > 0.5, else the top-1.
  std::optional<std::vector<std::size_t>> subjects;
  double threshold = 0.5;
};

struct ForwardResult {
  EncodedScene scene;
  PoseDecoderOut pose;
  JointDecoderOut joints;
  std::vector<Var> pose_world;   // per pose layer (incl. init), [N K x 3] world meters
  std::vector<Var> joint_world;  // per joint layer (incl. init), [N' K x 3] world meters
};

/// Confidence-based subject selection: every query above `threshold`, best first; the top-1 if none.
inline std::vector<std::size_t> select_subjects(const Tensor& conf, double threshold = 0.5) {
  std::vector<std::size_t> idx(conf.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i : idx)
    if (conf[i] > threshold) out.push_back(i);
  if (out.empty() && !idx.empty()) out.push_back(idx.front());
  return out;
}

class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Registers and initializes every parameter. `prior` ([K x 3], normalized radar frame)
  /// sets the bias of the query-MLP output so the initial reference poses start there.
  void init(std::uint64_t seed, const Tensor* prior = nullptr) {
    params_ = ParamStore();
    Rng rng(seed);
    const std::size_t d = cfg_.d, K = cfg_.joints;
    for (std::size_t s = 0; s < cfg_.scales; ++s)
      add_affine(params_, conv_w(s), conv_b(s), 9 * (s == 0 ? cfg_.frames : d), d, rng);
    params_.add("embed.level", rng.normal_tensor(Shape{cfg_.scales, d}, 0.02));
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      init_deform_attn(params_, {p + ".ca"}, cfg_.encoder_dims(), rng, cfg_.offset_radius);
      add_layer_norm(p + ".ln");
      add_ffn(p + ".ffn", d, cfg_.ffn, d, rng);
    }
    params_.add("pose.query", rng.normal_tensor(Shape{cfg_.queries, d}, 0.02));
    add_ffn("pose.init", d, d, 3 * K, rng);
    if (prior) {
      require(prior->rows() == K && prior->cols() == 3, "Model::init: prior must be [K x 3]");
      Tensor& b = params_.value("pose.init.b2");
      for (std::size_t i = 0; i < 3 * K; ++i) b[i] = kernels::sigmoid_inverse((*prior)[i]);
    }
    const bool mask = cfg_.view_mask == ViewMaskMode::adaptive;
    for (std::size_t l = 0; l < cfg_.pose_layers; ++l) {
      const std::string p = "pose" + std::to_string(l);
      init_self_attn(params_, {p + ".sa"}, d, rng);
      add_layer_norm(p + ".ln1");
      init_deform_attn(params_, {p + ".ca"}, cfg_.pose_dims(), rng, cfg_.offset_radius, mask, cfg_.mask_hidden);
      add_layer_norm(p + ".ln2");
      add_ffn(p + ".ffn", d, cfg_.ffn, d, rng);
      add_layer_norm(p + ".ln3");
    }
    add_ffn("pose.head", d, d, 3 * K, rng);
    params_.value("pose.head.w2").fill(0.0);
    params_.value("pose.head.b2").fill(0.0);
    add_affine(params_, "pose.cls.w", "pose.cls.b", d, 1, rng);
    params_.value("pose.cls.b").fill(0.0);

    params_.add("joint.query", rng.normal_tensor(Shape{K, d}, 0.02));
    add_affine(params_, "joint.ctx.w", "joint.ctx.b", d, d, rng);
    for (std::size_t l = 0; l < cfg_.joint_layers; ++l) {
      const std::string p = "joint" + std::to_string(l);
      init_self_attn(params_, {p + ".sa"}, d, rng);
      add_layer_norm(p + ".ln1");
      init_deform_attn(params_, {p + ".ca"}, cfg_.joint_dims(), rng, cfg_.offset_radius, mask, cfg_.mask_hidden);
      add_layer_norm(p + ".ln2");
      add_ffn(p + ".ffn", d, cfg_.ffn, d, rng);
      add_layer_norm(p + ".ln3");
    }
    params_.add("joint.head.w", Tensor(Shape{d, 3}));
    params_.add("joint.head.b", Tensor(Shape{3}));
  }

  /// Zeroes the last layer of both regression heads.
  void zero_regression_heads() {
    for (const char* n : {"pose.head.w2", "pose.head.b2", "joint.head.w", "joint.head.b"}) params_.value(n).fill(0.0);
  }

  // ---- stages ----------------------------------------------------------

  /// Shared strided-convolution stack on one view; input [(rows*cols) x T] -> S levels [rows_s*cols_s x d].
  std::vector<Var> backbone(Tape& t, Var input, std::size_t rows, std::size_t cols) {
    std::vector<Var> out;
    Var x = input;
    for (std::size_t s = 0; s < cfg_.scales; ++s) {
      Var patches = ops::im2col_3x3_s2(x, rows, cols);
      x = ops::relu(ops::affine(patches, t.param(params_, conv_w(s)), t.param(params_, conv_b(s))));
      rows = (rows + 1) / 2;
      cols = (cols + 1) / 2;
      out.push_back(x);
    }
    return out;
  }

  EncodedScene encode(Tape& t, const RadarFrameStack& stack) {
    stack.validate();
    require_config(stack.frames() == cfg_.frames && stack.width() == cfg_.width &&
                       stack.height() == cfg_.height && stack.depth() == cfg_.depth,
                   "radar stack extents do not match the model configuration");
    EncodedScene sc;
    sc.levels = cfg_.levels();
    const std::size_t S = cfg_.scales;
    auto hor = backbone(t, t.constant(RadarFrameStack::channels_last(stack.hor)), cfg_.width, cfg_.depth);
    auto ver = backbone(t, t.constant(RadarFrameStack::channels_last(stack.ver)), cfg_.height, cfg_.depth);
    sc.backbone = hor;
    sc.backbone.insert(sc.backbone.end(), ver.begin(), ver.end());
    // positional + level embeddings
    Var lvl = t.param(params_, "embed.level");
    std::vector<Var> emb;
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t s = 0; s < S; ++s) {
        const LevelShape sh = sc.levels[v * S + s];
        Var z = sc.backbone[v * S + s];
        z = ops::add(z, t.constant(sinusoidal_embedding(sh.rows, sh.cols, cfg_.d)));
        z = ops::add(z, ops::gather_rows(lvl, std::vector<std::size_t>(sh.size(), s)));
        emb.push_back(z);
      }
    Var fh = ops::concat_rows(std::vector<Var>(emb.begin(), emb.begin() + static_cast<long>(S)));
    Var fv = ops::concat_rows(std::vector<Var>(emb.begin() + static_cast<long>(S), emb.end()));
    const std::vector<LevelShape> lh(sc.levels.begin(), sc.levels.begin() + static_cast<long>(S));
    const std::vector<LevelShape> lv(sc.levels.begin() + static_cast<long>(S), sc.levels.end());
    Var ref_h = t.constant(pixel_centers(lh)), ref_v = t.constant(pixel_centers(lv));
    for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      Var nh = encoder_step(t, p, fh, ref_h, fv, lv);
      Var nv = encoder_step(t, p, fv, ref_v, fh, lh);
      fh = nh;
      fv = nv;
    }
    sc.hor = fh;
    sc.ver = fv;
    sc.maps = ops::concat_rows({fh, fv});
    return sc;
  }

  PoseDecoderOut decode_poses(Tape& t, const EncodedScene& sc, Rng* rng = nullptr) {
    PoseDecoderOut out;
    const std::size_t N = cfg_.queries;
    Var q = t.param(params_, "pose.query");
    Var ref = ops::sigmoid(ffn(t, "pose.init", q));
    out.refs.push_back(ref);
    const DeformAttnDims dm = cfg_.pose_dims();
    for (std::size_t l = 0; l < cfg_.pose_layers; ++l) {
      const std::string p = "pose" + std::to_string(l);
      q = decoder_layer(t, p, q, ref, sc, dm, N, rng);
      Var delta = ffn(t, "pose.head", q);
      ref = ops::refine(ref, delta);
      out.deltas.push_back(delta);
      out.refs.push_back(ref);
    }
    out.queries = q;
    out.conf_logits = ops::reshape(ops::affine(q, t.param(params_, "pose.cls.w"), t.param(params_, "pose.cls.b")),
                                   Shape{N});
    out.conf = ops::sigmoid(out.conf_logits);
    return out;
  }

  JointDecoderOut decode_joints(Tape& t, const EncodedScene& sc, const PoseDecoderOut& pose,
                                const std::vector<std::size_t>& subjects, Rng* rng = nullptr) {
    JointDecoderOut out;
    out.subjects = subjects;
    if (subjects.empty()) return out;
    const std::size_t K = cfg_.joints, n = subjects.size();
    Var ref = ops::reshape(ops::gather_rows(pose.refs.back(), subjects), Shape{n * K, 3});
    out.refs.push_back(ref);
    std::vector<std::size_t> rep, tile;
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t k = 0; k < K; ++k) {
        rep.push_back(s);
        tile.push_back(k);
      }
    Var ctx = ops::affine(ops::gather_rows(pose.queries, subjects), t.param(params_, "joint.ctx.w"),
                          t.param(params_, "joint.ctx.b"));
    Var q = ops::add(ops::gather_rows(t.param(params_, "joint.query"), tile), ops::gather_rows(ctx, rep));
    const DeformAttnDims dm = cfg_.joint_dims();
    for (std::size_t l = 0; l < cfg_.joint_layers; ++l) {
      const std::string p = "joint" + std::to_string(l);
      q = decoder_layer(t, p, q, ref, sc, dm, K, rng);
      Var delta = ops::affine(q, t.param(params_, "joint.head.w"), t.param(params_, "joint.head.b"));
      ref = ops::refine(ref, delta);
      out.deltas.push_back(delta);
      out.refs.push_back(ref);
    }
    return out;
  }

  /// Normalized radar-frame rows -> world meters.
  Var to_world(Var norm, const CalibRig& rig) const {
    return ops::transform_rows(ops::denormalize_rows(norm, cfg_.extents), rig.radar_to_world);
  }

  ForwardResult forward_full(Tape& t, const RadarFrameStack& stack, const CalibRig& rig,
                             const ForwardOptions& opt = {}) {
    ForwardResult r;
    r.scene = encode(t, stack);
    r.pose = decode_poses(t, r.scene, opt.rng);
    for (Var p : r.pose.refs) r.pose_world.push_back(to_world(p, rig));
    const auto subjects = opt.subjects ? *opt.subjects : select_subjects(r.pose.conf.value(), opt.threshold);
    r.joints = decode_joints(t, r.scene, r.pose, subjects, opt.rng);
    for (Var p : r.joints.refs) r.joint_world.push_back(to_world(p, rig));
    return r;
  }

  // ---- checkpoints -----------------------------------------------------

  /// Writes `path` (parameter binary) and `path.json` (config sidecar with hash).
  void save(const std::string& path, const nlohmann::json& extra = nlohmann::json::object()) const {
    params_.save(path);
    nlohmann::json side = {{"config", to_json(cfg_)}, {"config_hash", config_hash(to_json(cfg_))}, {"extra", extra}};
    std::ofstream os(path + ".json");
    require(bool(os), "Model::save: cannot write " + path + ".json");
    os << side.dump(2) << '\n';
  }

  /// Loads a checkpoint; refuses when the sidecar hash disagrees with its config or with `expected`.
  static Model load(const std::string& path, const ModelConfig* expected = nullptr) {
    std::ifstream is(path + ".json");
    require(bool(is), "Model::load: missing sidecar " + path + ".json");
    const auto side = nlohmann::json::parse(is);
    const ModelConfig cfg = model_config_from_json(side.at("config"));
    const std::string h = side.at("config_hash");
    require(h == config_hash(to_json(cfg)), "Model::load: config hash mismatch in " + path + ".json");
    if (expected)
      require(config_hash(to_json(*expected)) == h, "Model::load: checkpoint was trained with a different config");
    Model m(cfg);
    m.params_ = ParamStore::load(path);
    return m;
  }

 private:
  static std::string conv_w(std::size_t s) { return "backbone.conv" + std::to_string(s) + ".w"; }
  static std::string conv_b(std::size_t s) { return "backbone.conv" + std::to_string(s) + ".b"; }

  void add_layer_norm(const std::string& p) {
    params_.add(p + ".g", Tensor(Shape{cfg_.d}, 1.0));
    params_.add(p + ".b", Tensor(Shape{cfg_.d}));
  }
  void add_ffn(const std::string& p, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    add_affine(params_, p + ".w1", p + ".b1", in, hidden, rng);
    add_affine(params_, p + ".w2", p + ".b2", hidden, out, rng);
  }

  Var ffn(Tape& t, const std::string& p, Var x) {
    return ops::ffn(x, t.param(params_, p + ".w1"), t.param(params_, p + ".b1"), t.param(params_, p + ".w2"),
                    t.param(params_, p + ".b2"));
  }
  Var layer_norm(Tape& t, const std::string& p, Var x) {
    return ops::layer_norm(x, t.param(params_, p + ".g"), t.param(params_, p + ".b"));
  }

  // F_a + FFN(LN(F_a + CA(F_a -> F_b)))
  Var encoder_step(Tape& t, const std::string& p, Var fa, Var ref_a, Var fb, const std::vector<LevelShape>& lb) {
    Var ca = ops::planar_attention(fa, ref_a, fb, lb, cfg_.encoder_dims(), params_, {p + ".ca"});
    return ops::add(fa, ffn(t, p + ".ffn", layer_norm(t, p + ".ln", ops::add(fa, ca))));
  }

  Var decoder_layer(Tape& t, const std::string& p, Var q, Var ref, const EncodedScene& sc, const DeformAttnDims& dm,
                    std::size_t group, Rng* rng) {
    q = layer_norm(t, p + ".ln1", ops::add(q, ops::self_attention(q, params_, {p + ".sa"}, cfg_.heads, group)));
    const std::size_t Q = q.value().rows();
    std::optional<Var> mask;
    switch (cfg_.view_mask) {
      case ViewMaskMode::both: break;
      case ViewMaskMode::adaptive: mask = ops::view_mask_for(q, params_, {p + ".ca"}, dm); break;
      case ViewMaskMode::random:
        if (!rng) break;  // no draws available: keep both views
        mask = t.constant(fixed_view_mask(ViewMaskMode::random, Q, dm.offsets, rng));
        break;
      default: mask = t.constant(fixed_view_mask(cfg_.view_mask, Q, dm.offsets)); break;
    }
    Var ca = ops::deform_attention(q, ref, sc.maps, sc.levels, dm, params_, {p + ".ca"}, mask);
    q = layer_norm(t, p + ".ln2", ops::add(q, ca));
    return layer_norm(t, p + ".ln3", ops::add(q, ffn(t, p + ".ffn", q)));
  }

  ModelConfig cfg_;
  ParamStore params_;
};

}  // namespace raptr
