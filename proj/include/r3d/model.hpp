#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "r3d/diffusion.hpp"
#include "r3d/errors.hpp"
#include "r3d/geom.hpp"
#include "r3d/parallel.hpp"
#include "r3d/rng.hpp"

namespace r3d {

using Mat = Eigen::MatrixXd;

inline constexpr int kPointDim = 3;
inline constexpr int kTimeDim = 3;
// The denoiser consumes the current displacement concatenated with the point
// it displaces; a displacement alone cannot tell the network which surface
// region a point belongs to, so per-point conditioning on coordinates is what
// lets reconstructions stay aligned with the input.
inline constexpr int kDenoiserInDim = kPointDim + 3;

struct WidthConfig {
  std::vector<int> encoder_hidden{128, 256, 512};
  int embedding_dim = 256;
  std::vector<int> denoiser_hidden{128, 256, 512, 256, 128};

  int context_dim() const { return embedding_dim + kTimeDim; }

  void validate() const {
    if (encoder_hidden.empty() || denoiser_hidden.empty())
      throw InvalidWidths("widths: hidden layer lists must be non-empty");
    if (embedding_dim < 1) throw InvalidWidths("widths: embedding_dim must be >= 1");
    for (int w : encoder_hidden)
      if (w < 1) throw InvalidWidths("widths: encoder layer width must be >= 1");
    for (int w : denoiser_hidden)
      if (w < 1) throw InvalidWidths("widths: denoiser layer width must be >= 1");
  }

  bool operator==(const WidthConfig& o) const {
    return encoder_hidden == o.encoder_hidden && embedding_dim == o.embedding_dim &&
           denoiser_hidden == o.denoiser_hidden;
  }
};

struct TimeEmbedding {
  double beta = 0.0;
  double sin_beta = 0.0;
  double cos_beta = 1.0;

  static TimeEmbedding from_beta(double b) {
    return {b, std::sin(b), std::cos(b)};
  }
};

struct LinearLayer {
  Mat w;  // in x out
  Mat b;  // out x 1
};

// out = (x * wx + bx) (.) sigmoid(ctx * wg + bg) + ctx * wb
struct ConcatSquashLayer {
  Mat wx;  // in x out
  Mat bx;  // out x 1
  Mat wg;  // ctx x out
  Mat bg;  // out x 1
  Mat wb;  // ctx x out
};

struct ModelParams {
  WidthConfig widths;
  std::vector<LinearLayer> encoder;  // point-wise MLP before the max-pool
  LinearLayer head;                  // pooled feature -> embedding
  std::vector<ConcatSquashLayer> denoiser;
};

using GradientSet = ModelParams;
using ShapeEmbedding = std::vector<double>;

template <class Params, class Fn>
void for_each_array(Params& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string tag = "enc" + std::to_string(l);
    fn(tag + ".w", p.encoder[l].w);
    fn(tag + ".b", p.encoder[l].b);
  }
  fn("head.w", p.head.w);
  fn("head.b", p.head.b);
  for (std::size_t l = 0; l < p.denoiser.size(); ++l) {
    const std::string tag = "dn" + std::to_string(l);
    fn(tag + ".wx", p.denoiser[l].wx);
    fn(tag + ".bx", p.denoiser[l].bx);
    fn(tag + ".wg", p.denoiser[l].wg);
    fn(tag + ".bg", p.denoiser[l].bg);
    fn(tag + ".wb", p.denoiser[l].wb);
  }
}

inline std::vector<std::pair<int, int>> layer_shapes(const WidthConfig& w) {
  std::vector<std::pair<int, int>> shapes;
  int prev = kPointDim;
  for (int h : w.encoder_hidden) {
    shapes.emplace_back(prev, h);
    shapes.emplace_back(h, 1);
    prev = h;
  }
  shapes.emplace_back(prev, w.embedding_dim);
  shapes.emplace_back(w.embedding_dim, 1);
  prev = kDenoiserInDim;
  std::vector<int> outs = w.denoiser_hidden;
  outs.push_back(kPointDim);
  for (int h : outs) {
    shapes.emplace_back(prev, h);           // wx
    shapes.emplace_back(h, 1);              // bx
    shapes.emplace_back(w.context_dim(), h);  // wg
    shapes.emplace_back(h, 1);              // bg
    shapes.emplace_back(w.context_dim(), h);  // wb
    prev = h;
  }
  return shapes;
}

inline std::size_t param_count(const WidthConfig& w) {
  std::size_t total = 0;
  for (const auto& [r, c] : layer_shapes(w))
    total += static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
  return total;
}

inline ModelParams make_shaped(const WidthConfig& w) {
  w.validate();
  ModelParams p;
  p.widths = w;
  int prev = kPointDim;
  for (int h : w.encoder_hidden) {
    p.encoder.push_back({Mat::Zero(prev, h), Mat::Zero(h, 1)});
    prev = h;
  }
  p.head = {Mat::Zero(prev, w.embedding_dim), Mat::Zero(w.embedding_dim, 1)};
  prev = kDenoiserInDim;
  std::vector<int> outs = w.denoiser_hidden;
  outs.push_back(kPointDim);
  for (int h : outs) {
    p.denoiser.push_back({Mat::Zero(prev, h), Mat::Zero(h, 1),
                          Mat::Zero(w.context_dim(), h), Mat::Zero(h, 1),
                          Mat::Zero(w.context_dim(), h)});
    prev = h;
  }
  return p;
}

inline GradientSet zero_gradients(const WidthConfig& w) { return make_shaped(w); }

// Weights uniform in +-1/sqrt(fan_in), biases zero; arrays filled in a fixed
// visitation order so a seed pins every parameter bit.
inline ModelParams init_params(std::uint64_t seed, const WidthConfig& w = WidthConfig{}) {
  ModelParams p = make_shaped(w);
  Rng rng(seed);
  for_each_array(p, [&rng](const std::string& name, Mat& m) {
    const bool is_bias = name.ends_with(".b") || name.ends_with(".bx") || name.ends_with(".bg");
    if (is_bias) return;  // already zero
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.uniform_range(-bound, bound);
  });
  return p;
}

// Smooth ramp activation s(x) = 0.5 x (1 + x / sqrt(1 + x^2)): analytic
// everywhere with algebra-only evaluation, tending to 0 for x -> -inf and to
// x for x -> +inf.
inline Mat ramp(const Mat& x) {
  const auto a = x.array();
  return (0.5 * a * (1.0 + a * (1.0 + a.square()).rsqrt())).matrix();
}

// s'(x) = 0.5 (1 + u) + 0.5 x d^3 with d = 1/sqrt(1+x^2), u = x d
inline Mat ramp_grad(const Mat& x) {
  const auto a = x.array();
  const auto d = (1.0 + a.square()).rsqrt();
  return (0.5 * (1.0 + a * d) + 0.5 * a * d.cube()).matrix();
}

inline Mat sigmoid(const Mat& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

struct EncoderCache {
  Mat input;                    // N x 3
  std::vector<Mat> pre;         // pre-activation per hidden layer
  std::vector<Mat> post;        // post-activation per hidden layer
  Mat pooled;                   // 1 x last_width
  std::vector<Eigen::Index> argmax;  // pooling row per feature column
};

inline Mat encode_forward(const Mat& points, const ModelParams& p, EncoderCache* cache) {
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.input = points;
  c.pre.clear();
  c.post.clear();
  const Mat* h = &c.input;
  for (const auto& layer : p.encoder) {
    Mat a = (*h) * layer.w;
    a.rowwise() += layer.b.col(0).transpose();
    c.post.push_back(ramp(a));
    c.pre.push_back(std::move(a));
    h = &c.post.back();
  }
  const Mat& top = *h;
  c.pooled.resize(1, top.cols());
  c.argmax.assign(static_cast<std::size_t>(top.cols()), 0);
  for (Eigen::Index j = 0; j < top.cols(); ++j) {
    Eigen::Index row = 0;
    c.pooled(0, j) = top.col(j).maxCoeff(&row);
    c.argmax[static_cast<std::size_t>(j)] = row;
  }
  Mat out = c.pooled * p.head.w;
  out.rowwise() += p.head.b.col(0).transpose();
  return out;  // 1 x embedding_dim
}

inline void encode_backward(const EncoderCache& c, const ModelParams& p,
                            const Mat& d_embedding, GradientSet& g) {
  g.head.w += c.pooled.transpose() * d_embedding;
  g.head.b += d_embedding.transpose();
  const Mat d_pooled = d_embedding * p.head.w.transpose();  // 1 x last_width

  const std::size_t depth = p.encoder.size();
  Mat d_post = Mat::Zero(c.input.rows(), c.post.back().cols());
  for (Eigen::Index j = 0; j < d_post.cols(); ++j)
    d_post(c.argmax[static_cast<std::size_t>(j)], j) = d_pooled(0, j);

  for (std::size_t l = depth; l-- > 0;) {
    const Mat d_pre = d_post.cwiseProduct(ramp_grad(c.pre[l]));
    const Mat& below = l == 0 ? c.input : c.post[l - 1];
    g.encoder[l].w += below.transpose() * d_pre;
    g.encoder[l].b += d_pre.colwise().sum().transpose();
    if (l > 0) d_post = d_pre * p.encoder[l].w.transpose();
  }
}

struct DenoiserCache {
  Mat input;               // N x 6: [delta | point]
  Mat ctx;                 // 1 x (embedding_dim + 3)
  std::vector<Mat> affine;  // x * wx + bx per layer
  std::vector<Mat> gate;    // sigmoid(ctx * wg + bg) per layer, 1 x out
  std::vector<Mat> pre;     // gated pre-activation per layer
  std::vector<Mat> post;    // ramp output per non-final layer
};

inline Mat denoise_forward(const Mat& delta, const Mat& points, const Mat& ctx,
                           const ModelParams& p, DenoiserCache* cache) {
  DenoiserCache local;
  DenoiserCache& c = cache ? *cache : local;
  const Eigen::Index n = delta.rows();
  c.input.resize(n, kDenoiserInDim);
  c.input.leftCols(kPointDim) = delta;
  c.input.rightCols(3) = points;
  c.ctx = ctx;
  c.affine.clear();
  c.gate.clear();
  c.pre.clear();
  c.post.clear();

  const Mat* h = &c.input;
  const std::size_t depth = p.denoiser.size();
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = p.denoiser[l];
    Mat a = (*h) * layer.wx;
    a.rowwise() += layer.bx.col(0).transpose();
    Mat gate_pre = ctx * layer.wg;
    gate_pre.rowwise() += layer.bg.col(0).transpose();
    Mat gate = sigmoid(gate_pre);
    const Mat bias = ctx * layer.wb;  // 1 x out
    Mat y = (a.array().rowwise() * gate.row(0).array()).matrix();
    y.rowwise() += bias.row(0);
    c.affine.push_back(std::move(a));
    c.gate.push_back(std::move(gate));
    if (l + 1 < depth) {
      c.post.push_back(ramp(y));
      c.pre.push_back(std::move(y));
      h = &c.post.back();
    } else {
      c.pre.push_back(std::move(y));
      h = &c.pre.back();
    }
  }
  return c.pre.back() + delta;  // residual: identity when the stack is zero
}

// Returns the gradient with respect to ctx (1 x context_dim).
inline Mat denoise_backward(const DenoiserCache& c, const ModelParams& p,
                            const Mat& d_out, GradientSet& g) {
  const std::size_t depth = p.denoiser.size();
  Mat d_ctx = Mat::Zero(1, c.ctx.cols());
  Mat d_y;
  Mat d_below = d_out;
  for (std::size_t l = depth; l-- > 0;) {
    if (l + 1 < depth)
      d_y = d_below.cwiseProduct(ramp_grad(c.pre[l]));
    else
      d_y = d_below;
    const auto& layer = p.denoiser[l];
    const Mat& gate = c.gate[l];
    const Mat d_affine = (d_y.array().rowwise() * gate.row(0).array()).matrix();
    const Mat d_gate = (d_y.cwiseProduct(c.affine[l])).colwise().sum();  // 1 x out
    const Mat d_gate_pre =
        (d_gate.array() * gate.array() * (1.0 - gate.array())).matrix();
    const Mat d_bias = d_y.colwise().sum();  // 1 x out
    const Mat& below = l == 0 ? c.input : c.post[l - 1];
    g.denoiser[l].wx += below.transpose() * d_affine;
    g.denoiser[l].bx += d_affine.colwise().sum().transpose();
    g.denoiser[l].wg += c.ctx.transpose() * d_gate_pre;
    g.denoiser[l].bg += d_gate_pre.transpose();
    g.denoiser[l].wb += c.ctx.transpose() * d_bias;
    d_ctx += d_gate_pre * layer.wg.transpose() + d_bias * layer.wb.transpose();
    if (l > 0) d_below = d_affine * layer.wx.transpose();
  }
  return d_ctx;
}

inline Mat cloud_to_mat(const PointCloud& pc) {
  Mat m(static_cast<Eigen::Index>(pc.size()), 3);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = pc.points[i].x;
    m(static_cast<Eigen::Index>(i), 1) = pc.points[i].y;
    m(static_cast<Eigen::Index>(i), 2) = pc.points[i].z;
  }
  return m;
}

inline Mat field_to_mat(const std::vector<Vec3>& f) {
  Mat m(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = f[i].x;
    m(static_cast<Eigen::Index>(i), 1) = f[i].y;
    m(static_cast<Eigen::Index>(i), 2) = f[i].z;
  }
  return m;
}

inline std::vector<Vec3> mat_to_field(const Mat& m) {
  std::vector<Vec3> f(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    f[static_cast<std::size_t>(i)] = {m(i, 0), m(i, 1), m(i, 2)};
  return f;
}

inline Mat make_context(const Eigen::Ref<const Mat>& embedding, double beta_t) {
  Mat ctx(1, embedding.cols() + kTimeDim);
  ctx.leftCols(embedding.cols()) = embedding;
  const TimeEmbedding te = TimeEmbedding::from_beta(beta_t);
  ctx(0, embedding.cols()) = te.beta;
  ctx(0, embedding.cols() + 1) = te.sin_beta;
  ctx(0, embedding.cols() + 2) = te.cos_beta;
  return ctx;
}

inline ShapeEmbedding encode(const PointCloud& pc, const ModelParams& p) {
  if (pc.points.empty()) throw DegenerateCloud("encode: empty cloud");
  const Mat c = encode_forward(cloud_to_mat(pc), p, nullptr);
  return ShapeEmbedding(c.data(), c.data() + c.size());
}

// Predicted noise for one cloud; delta and cloud rows are index-aligned.
inline DisplacementField denoise(const DisplacementField& delta_t, const PointCloud& cloud,
                                 const ShapeEmbedding& c, double beta_t,
                                 const ModelParams& p) {
  if (delta_t.size() != cloud.size())
    throw ShapeMismatch("denoise: delta and cloud lengths differ");
  if (static_cast<int>(c.size()) != p.widths.embedding_dim)
    throw ShapeMismatch("denoise: embedding dimension mismatch");
  Mat emb(1, static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) emb(0, static_cast<Eigen::Index>(i)) = c[i];
  const Mat out = denoise_forward(field_to_mat(delta_t), cloud_to_mat(cloud),
                                  make_context(emb, beta_t), p, nullptr);
  return mat_to_field(out);
}

struct TrainingTuple {
  PointCloud anomalous;
  DisplacementField gt_displacement;
};

namespace model_streams {
inline constexpr std::uint64_t kTupleDraw = 0x7475706c65647277ULL;
}

// Draw seed tied to tuple content, so a duplicated tuple receives the same
// timestep and noise regardless of its batch position and the batch mean is
// invariant under duplication.
inline std::uint64_t tuple_draw_seed(std::uint64_t seed, const TrainingTuple& tuple) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : tuple.anomalous.points) mix(&p, sizeof(double) * 3);
  for (const auto& d : tuple.gt_displacement) mix(&d, sizeof(double) * 3);
  return stream_seed(seed, model_streams::kTupleDraw, h);
}

struct LossResult {
  double noise_loss = 0.0;
  double recon_mse = 0.0;
  GradientSet grads;
};

namespace detail {

struct TupleDraw {
  int t = 1;
  Mat eps;
};

struct TupleOutcome {
  double noise_loss = 0.0;
  double recon_mse = 0.0;
  GradientSet grads;
};

inline TupleOutcome tuple_loss(const TrainingTuple& tuple, const TupleDraw& draw,
                               const ModelParams& p, const NoiseSchedule& sched,
                               double inv_batch) {
  const auto n = static_cast<Eigen::Index>(tuple.anomalous.size());
  const double denom = 3.0 * static_cast<double>(n);

  TupleOutcome out;
  out.grads = zero_gradients(p.widths);

  const Mat points = cloud_to_mat(tuple.anomalous);
  const Mat delta_star = field_to_mat(tuple.gt_displacement);

  EncoderCache enc_cache;
  const Mat embedding = encode_forward(points, p, &enc_cache);

  const double ab = sched.alpha_bar(draw.t);
  const Mat delta_t = std::sqrt(ab) * delta_star + std::sqrt(1.0 - ab) * draw.eps;

  DenoiserCache dn_cache;
  const Mat ctx = make_context(embedding, sched.beta(draw.t));
  const Mat eps_hat = denoise_forward(delta_t, points, ctx, p, &dn_cache);

  const Mat resid = eps_hat - draw.eps;
  out.noise_loss = resid.squaredNorm() / denom;

  const Mat x0_hat = (delta_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  out.recon_mse = (x0_hat - delta_star).squaredNorm() / denom;

  const Mat d_eps = (2.0 * inv_batch / denom) * resid;
  const Mat d_ctx = denoise_backward(dn_cache, p, d_eps, out.grads);
  encode_backward(enc_cache, p, d_ctx.leftCols(embedding.cols()), out.grads);
  return out;
}

}  // namespace detail

inline void accumulate(GradientSet& into, const GradientSet& from) {
  for (std::size_t l = 0; l < into.encoder.size(); ++l) {
    into.encoder[l].w += from.encoder[l].w;
    into.encoder[l].b += from.encoder[l].b;
  }
  into.head.w += from.head.w;
  into.head.b += from.head.b;
  for (std::size_t l = 0; l < into.denoiser.size(); ++l) {
    into.denoiser[l].wx += from.denoiser[l].wx;
    into.denoiser[l].bx += from.denoiser[l].bx;
    into.denoiser[l].wg += from.denoiser[l].wg;
    into.denoiser[l].bg += from.denoiser[l].bg;
    into.denoiser[l].wb += from.denoiser[l].wb;
  }
}

// Mean noise-prediction loss over the batch plus exact reverse-mode gradients.
// Per-tuple work may run on several threads; each tuple's timestep and noise
// derive from its own content seed and the gradient reduction follows tuple
// order, so results do not depend on the thread count.
inline LossResult loss_and_gradients(const std::vector<TrainingTuple>& batch,
                                     const ModelParams& p, const NoiseSchedule& sched,
                                     std::uint64_t seed, int n_threads = 1) {
  if (batch.empty()) throw EmptyBatch("loss_and_gradients: empty batch");
  for (const auto& tuple : batch) {
    if (tuple.anomalous.points.empty())
      throw EmptyBatch("loss_and_gradients: empty cloud in batch");
    if (tuple.anomalous.size() != tuple.gt_displacement.size())
      throw ShapeMismatch("loss_and_gradients: displacement length differs from cloud");
  }

  const std::size_t b = batch.size();
  std::vector<detail::TupleDraw> draws(b);
  for (std::size_t i = 0; i < b; ++i) {
    Rng rng(tuple_draw_seed(seed, batch[i]));
    draws[i].t = 1 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(sched.t_max)));
    draws[i].eps.resize(static_cast<Eigen::Index>(batch[i].anomalous.size()), 3);
    for (Eigen::Index r = 0; r < draws[i].eps.rows(); ++r)
      for (Eigen::Index ccol = 0; ccol < 3; ++ccol) draws[i].eps(r, ccol) = rng.normal();
  }

  const double inv_batch = 1.0 / static_cast<double>(b);
  std::vector<detail::TupleOutcome> outcomes(b);
  parallel_for(b, n_threads, [&](std::size_t i) {
    outcomes[i] = detail::tuple_loss(batch[i], draws[i], p, sched, inv_batch);
  });

  LossResult result;
  result.grads = zero_gradients(p.widths);
  for (std::size_t i = 0; i < b; ++i) {
    result.noise_loss += outcomes[i].noise_loss * inv_batch;
    result.recon_mse += outcomes[i].recon_mse * inv_batch;
    accumulate(result.grads, outcomes[i].grads);
  }
  return result;
}

}  // namespace r3d
