#include "dbl/predictor.hpp"

#include <cmath>
#include <stdexcept>

namespace dbl {
namespace {

constexpr int kGroups = 8;

void add_conv(ParamStore& ps, const std::string& name, int co, int ci, RandomSource& root) {
  Tensor w = Tensor::zeros({co, ci, 3, 3});
  auto r = root.stream(name);
  kaiming_uniform(w, ci * 9, r);
  ps.add(name + ".w", w);
  ps.add(name + ".b", Tensor::zeros({co}));
}

void add_norm(ParamStore& ps, const std::string& name, int c) {
  ps.add(name + ".g", Tensor::full({c}, 1.f));
  ps.add(name + ".b", Tensor::zeros({c}));
}

void add_linear(ParamStore& ps, const std::string& name, int in, int out, RandomSource& root,
                float gain = 1.f) {
  Tensor w = Tensor::zeros({in, out});
  if (gain != 0.f) {
    auto r = root.stream(name);
    kaiming_uniform(w, in, r);
    if (gain != 1.f)
      for (float& v : w.data()) v *= gain;
  }
  ps.add(name + ".w", w);
  ps.add(name + ".b", Tensor::zeros({out}));
}

}  // namespace

NoisePredictor::NoisePredictor(int in_channels, int height, int width, std::uint64_t seed,
                               int base, int time_dim)
    : in_channels_(in_channels), height_(height), width_(width), base_(base),
      time_dim_(time_dim) {
  if (in_channels < 1) throw std::invalid_argument("NoisePredictor: channels must be >= 1");
  if (height < 2 || width < 2 || height % 2 || width % 2)
    throw std::invalid_argument("NoisePredictor: height and width must be even and >= 2");
  if (base < kGroups || base % kGroups)
    throw std::invalid_argument("NoisePredictor: base must be a positive multiple of 8");
  if (time_dim < 2 || time_dim % 2)
    throw std::invalid_argument("NoisePredictor: time_dim must be even and >= 2");

  RandomSource root(seed, "predictor-init");
  add_conv(params_, "enc1", base, in_channels, root);
  // learned positional maps let filters key on absolute location, which a
  // translation-equivariant stack cannot express on its own
  params_.add("pos1", Tensor::zeros({base, height, width}));
  add_norm(params_, "gn1", base);
  add_conv(params_, "enc2", base, base, root);
  add_norm(params_, "gn2", base);
  add_conv(params_, "mid1", 2 * base, base, root);
  params_.add("pos2", Tensor::zeros({2 * base, height / 2, width / 2}));
  add_norm(params_, "gn3", 2 * base);
  add_conv(params_, "mid2", 2 * base, 2 * base, root);
  add_norm(params_, "gn4", 2 * base);
  add_conv(params_, "dec1", base, 3 * base, root);
  add_norm(params_, "gn5", base);
  add_conv(params_, "out", in_channels, base, root);
  add_linear(params_, "time1", time_dim, 2 * base, root);
  add_linear(params_, "head_a", 2 * base, base, root);
  add_linear(params_, "head_b", 2 * base, 2 * base, root);
  // feature-wise scale heads start at identity (zero weights, scale = 1 + out)
  add_linear(params_, "head_as", 2 * base, base, root, 0.f);
  add_linear(params_, "head_bs", 2 * base, 2 * base, root, 0.f);
  // time-gated input skip: output = conv path + gate(t) * x, gate starts closed
  add_linear(params_, "head_g", 2 * base, in_channels, root, 0.f);
  // pooled-context pathway: global summaries of encoder and mid features
  // modulate the decoder, so locally detected structure can switch behaviour
  // everywhere; kept live (small gain) from the start so pooled statistics
  // influence the decoder immediately instead of waiting for a cold start
  add_linear(params_, "ctx1h", base, 2 * base, root);
  add_linear(params_, "ctx1hm", base, 2 * base, root);
  add_linear(params_, "ctx1", 2 * base, 2 * base, root);
  add_linear(params_, "ctx1m", 2 * base, 2 * base, root);
  add_linear(params_, "ctx_s", 2 * base, base, root, 0.2f);
  add_linear(params_, "ctx_b", 2 * base, base, root, 0.2f);
}

Tensor NoisePredictor::time_embedding(const std::vector<int>& ts, int dim) {
  if (dim < 2 || dim % 2) throw std::invalid_argument("time_embedding: dim must be even");
  const int half = dim / 2;
  const int b = static_cast<int>(ts.size());
  std::vector<float> data(static_cast<size_t>(b) * dim);
  for (int i = 0; i < b; ++i) {
    for (int k = 0; k < half; ++k) {
      const double f =
          half > 1 ? std::exp(-std::log(10000.0) * k / (half - 1)) : 1.0;
      const double a = ts[static_cast<size_t>(i)] * f;
      data[static_cast<size_t>(i) * dim + k] = static_cast<float>(std::sin(a));
      data[static_cast<size_t>(i) * dim + half + k] = static_cast<float>(std::cos(a));
    }
  }
  return Tensor::from(std::move(data), {b, dim});
}

Tensor NoisePredictor::forward(const Tensor& x, const std::vector<int>& ts) const {
  if (x.rank() != 4 || x.dim(1) != in_channels_ || x.dim(2) != height_ || x.dim(3) != width_)
    throw std::invalid_argument("NoisePredictor: input shape mismatch");
  if (static_cast<int>(ts.size()) != x.dim(0))
    throw std::invalid_argument("NoisePredictor: one timestep per sample required");
  for (int t : ts)
    if (t < 1) throw std::invalid_argument("NoisePredictor: timesteps are 1-indexed");

  const auto& P = params_;
  Tensor emb = time_embedding(ts, time_dim_);
  Tensor e = silu(add_row_bias(matmul(emb, P.find("time1.w")), P.find("time1.b")));
  Tensor ta = add_row_bias(matmul(e, P.find("head_a.w")), P.find("head_a.b"));
  Tensor tb = add_row_bias(matmul(e, P.find("head_b.w")), P.find("head_b.b"));
  Tensor sa = add(add_row_bias(matmul(e, P.find("head_as.w")), P.find("head_as.b")), 1.f);
  Tensor sb = add(add_row_bias(matmul(e, P.find("head_bs.w")), P.find("head_bs.b")), 1.f);

  Tensor h = add_image(conv2d(x, P.find("enc1.w"), P.find("enc1.b")), P.find("pos1"));
  h = silu(group_norm(h, P.find("gn1.g"), P.find("gn1.b"), kGroups));
  h = conv2d(h, P.find("enc2.w"), P.find("enc2.b"));
  h = silu(group_norm(h, P.find("gn2.g"), P.find("gn2.b"), kGroups));

  Tensor p = avg_pool2(h);
  p = add_channel_bias(scale_channels(p, sa), ta);
  p = add_image(conv2d(p, P.find("mid1.w"), P.find("mid1.b")), P.find("pos2"));
  p = silu(group_norm(p, P.find("gn3.g"), P.find("gn3.b"), kGroups));
  p = add_channel_bias(scale_channels(p, sb), tb);
  p = conv2d(p, P.find("mid2.w"), P.find("mid2.b"));
  p = silu(group_norm(p, P.find("gn4.g"), P.find("gn4.b"), kGroups));

  // mean taps carry plane-wide statistics; max taps magnify localized peaks
  // that the mean would dilute
  Tensor ctx = add(add_row_bias(matmul(global_avg_pool(h), P.find("ctx1h.w")), P.find("ctx1h.b")),
                   add_row_bias(matmul(global_avg_pool(p), P.find("ctx1.w")), P.find("ctx1.b")));
  ctx = add(ctx, add_row_bias(matmul(global_max_pool(h), P.find("ctx1hm.w")), P.find("ctx1hm.b")));
  ctx = add(ctx, add_row_bias(matmul(global_max_pool(p), P.find("ctx1m.w")), P.find("ctx1m.b")));
  ctx = silu(ctx);
  Tensor cs = add(add_row_bias(matmul(ctx, P.find("ctx_s.w")), P.find("ctx_s.b")), 1.f);
  Tensor cb = add_row_bias(matmul(ctx, P.find("ctx_b.w")), P.find("ctx_b.b"));

  Tensor u = concat_channels(upsample_nearest2(p), h);
  u = conv2d(u, P.find("dec1.w"), P.find("dec1.b"));
  u = silu(group_norm(u, P.find("gn5.g"), P.find("gn5.b"), kGroups));
  u = add_channel_bias(scale_channels(u, cs), cb);
  Tensor y = conv2d(u, P.find("out.w"), P.find("out.b"));
  Tensor gate = add_row_bias(matmul(e, P.find("head_g.w")), P.find("head_g.b"));
  return add(y, scale_channels(x, gate));
}

Tensor NoisePredictor::predict(const Tensor& x, int t) const {
  return forward(x, std::vector<int>(static_cast<size_t>(x.dim(0)), t)).detach();
}

NoisePredictor NoisePredictor::clone() const {
  NoisePredictor c(in_channels_, height_, width_, 0, base_, time_dim_);
  c.params_.copy_from(params_);
  return c;
}

Tensor loss_dm(const NoisePredictor& m, const Tensor& x0, const std::vector<int>& ts,
               const Tensor& eps, const NoiseSchedule& s) {
  if (x0.shape() != eps.shape()) throw std::invalid_argument("loss_dm: x0/eps shape mismatch");
  Tensor xt = q_sample(x0, ts, eps, s);
  return mse(m.forward(xt, ts), eps);
}

Tensor take(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() < 1) throw std::invalid_argument("take: rank >= 1 required");
  const int n = x.dim(0);
  const size_t stride = static_cast<size_t>(x.numel()) / static_cast<size_t>(n);
  Shape shape = x.shape();
  shape[0] = static_cast<int>(idx.size());
  std::vector<float> out(idx.size() * stride);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw std::invalid_argument("take: index out of range");
    const float* src = x.ptr() + static_cast<size_t>(idx[i]) * stride;
    std::copy(src, src + stride, out.begin() + i * stride);
  }
  return Tensor::from(std::move(out), shape);
}

std::vector<int> shuffled_indices(int n, RandomSource& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

std::vector<float> train_clean(NoisePredictor& m, const Tensor& images,
                               const TrainConfig& cfg, const NoiseSchedule& s) {
  if (images.rank() != 4) throw std::invalid_argument("train_clean: images must be [N,C,H,W]");
  if (cfg.epochs < 0 || cfg.batch < 1 || cfg.lr <= 0.f)
    throw std::invalid_argument("train_clean: bad config");
  const int n = images.dim(0);
  if (n < 1) throw std::invalid_argument("train_clean: empty dataset");

  RandomSource root(cfg.seed, "train-clean");
  Adam opt(m.params(), cfg.lr);
  std::vector<float> epoch_losses;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto shuffle_rng = root.stream("shuffle", static_cast<std::uint64_t>(e));
    auto step_rng = root.stream("steps", static_cast<std::uint64_t>(e));
    const std::vector<int> order = shuffled_indices(n, shuffle_rng);
    double total = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int b = std::min(cfg.batch, n - start);
      std::vector<int> idx(order.begin() + start, order.begin() + start + b);
      Tensor x0 = take(images, idx);
      std::vector<int> ts(static_cast<size_t>(b));
      for (auto& t : ts) t = 1 + static_cast<int>(step_rng.below(static_cast<std::uint64_t>(s.T)));
      Tensor eps = Tensor::normal(x0.shape(), step_rng);
      Tensor loss = loss_dm(m, x0, ts, eps, s);
      m.params().zero_grad();
      backward(loss);
      opt.step();
      total += loss.value();
      ++batches;
    }
    epoch_losses.push_back(static_cast<float>(total / batches));
  }
  return epoch_losses;
}

}  // namespace dbl
