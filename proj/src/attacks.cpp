#include "dbl/attacks.hpp"

#include <cmath>
#include <stdexcept>

namespace dbl {
namespace {

void require_vp(const NoiseSchedule& s, const char* who) {
  if (s.kind != ChainKind::vp)
    throw std::invalid_argument(std::string(who) + ": family is defined on VP chains only");
}

void require_t(const NoiseSchedule& s, int t, const char* who) {
  if (t < 1 || t > s.T)
    throw std::invalid_argument(std::string(who) + ": t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(s.T) + "]");
}

}  // namespace

const char* family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::baddiff: return "baddiff";
    case AttackFamily::trojdiff: return "trojdiff";
    default: return "villan";
  }
}

AttackFamily family_from_name(const std::string& name) {
  if (name == "baddiff") return AttackFamily::baddiff;
  if (name == "trojdiff") return AttackFamily::trojdiff;
  if (name == "villan") return AttackFamily::villan;
  throw std::invalid_argument("unknown attack family: " + name);
}

void validate_spec(const BackdoorSpec& spec, const NoiseSchedule& s) {
  if (!spec.trigger.defined() || !spec.target.defined())
    throw std::invalid_argument("backdoor spec: trigger and target are required");
  if (spec.trigger.rank() != 3 || spec.trigger.shape() != spec.target.shape())
    throw std::invalid_argument("backdoor spec: trigger/target must be matching [C,H,W]");
  for (int i = 0; i < spec.target.numel(); ++i)
    if (spec.target.at(i) < -1.f || spec.target.at(i) > 1.f)
      throw std::invalid_argument("backdoor spec: target values must lie in [-1,1]");
  if (!(spec.poisoning_rate > 0.f) || spec.poisoning_rate > 1.f)
    throw std::invalid_argument("backdoor spec: poisoning rate must be in (0,1]");
  if (spec.family == AttackFamily::trojdiff &&
      (!(spec.gamma_blend > 0.f) || !(spec.gamma_blend < 1.f)))
    throw std::invalid_argument("backdoor spec: trojdiff gamma must be in (0,1)");
  if (spec.family == AttackFamily::villan && !spec.villan_rho_hat.empty()) {
    if (static_cast<int>(spec.villan_rho_hat.size()) != s.T + 1)
      throw std::invalid_argument("backdoor spec: villan rho_hat must have size T+1");
    if (spec.villan_rho_hat[0] != 0.f)
      throw std::invalid_argument("backdoor spec: villan rho_hat[0] must anchor at 0");
  }
  require_vp(s, "backdoor spec");
}

BadDiffShift baddiff_shift(const NoiseSchedule& s) {
  require_vp(s, "baddiff_shift");
  BadDiffShift out;
  out.rho.assign(static_cast<size_t>(s.T) + 1, 0.f);
  out.rho_tilde.assign(static_cast<size_t>(s.T) + 1, 0.f);
  out.cumulative.assign(static_cast<size_t>(s.T) + 1, 0.f);
  for (int t = 1; t <= s.T; ++t) {
    const double sa = std::sqrt(static_cast<double>(s.alpha[t]));
    const double omb = std::sqrt(1.0 - s.alpha_bar[t]);
    out.rho[t] = static_cast<float>(1.0 - sa);
    out.rho_tilde[t] = static_cast<float>(omb / (1.0 + sa));
    out.cumulative[t] = static_cast<float>(1.0 - std::sqrt(static_cast<double>(s.alpha_bar[t])));
  }
  return out;
}

TrojDiffCoeffs trojdiff_coeffs(const NoiseSchedule& s, float gamma) {
  require_vp(s, "trojdiff_coeffs");
  if (!(gamma > 0.f)) throw std::invalid_argument("trojdiff_coeffs: gamma must be positive");
  const size_t n = static_cast<size_t>(s.T) + 1;
  TrojDiffCoeffs c;
  c.k.assign(n, 0.f);
  c.kappa_tilde_b.assign(n, 0.f);
  c.kappa_hat_b.assign(n, 0.f);
  c.rho_tilde_b.assign(n, 0.f);
  c.upsilon_b.assign(n, 0.f);
  for (int t = 1; t <= s.T; ++t) {
    // k^t = sqrt(1-abar^t) - sum_{i=2..t} prod_{j=i..t} sqrt(alpha^j) * k^{i-1}
    double acc = 0.0, prod = 1.0;
    for (int i = t; i >= 2; --i) {
      prod *= std::sqrt(static_cast<double>(s.alpha[i]));
      acc += prod * c.k[i - 1];
    }
    c.k[t] = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]) - acc);
    const double sa = std::sqrt(static_cast<double>(s.alpha[t]));
    const double omb = std::sqrt(1.0 - s.alpha_bar[t]);
    const double omb_prev = std::sqrt(1.0 - s.alpha_bar[t - 1]);
    c.kappa_tilde_b[t] = static_cast<float>(1.0 / sa);
    c.kappa_hat_b[t] = static_cast<float>(-gamma * (1.0 - s.alpha[t]) / (sa * omb));
    c.rho_tilde_b[t] = static_cast<float>(omb_prev - omb / sa);
    c.upsilon_b[t] = s.beta[t] * gamma * gamma;
  }
  return c;
}

VillanCoeffs villan_coeffs(const std::vector<float>& alpha_hat,
                           const std::vector<float>& beta_hat,
                           const std::vector<float>& rho_hat) {
  const size_t n = alpha_hat.size();
  if (beta_hat.size() != n || rho_hat.size() != n)
    throw std::invalid_argument("villan_coeffs: schedule length mismatch");
  if (n < 2) throw std::invalid_argument("villan_coeffs: need at least one step");
  if (alpha_hat[0] != 1.f || beta_hat[0] != 0.f || rho_hat[0] != 0.f)
    throw std::invalid_argument("villan_coeffs: anchors must be alpha_hat[0]=1, "
                                "beta_hat[0]=0, rho_hat[0]=0");
  for (size_t t = 1; t < n; ++t) {
    if (!(alpha_hat[t] > 0.f) || alpha_hat[t] > alpha_hat[t - 1])
      throw std::invalid_argument("villan_coeffs: alpha_hat must be positive non-increasing");
    if (!(beta_hat[t] > 0.f) || beta_hat[t] < beta_hat[t - 1])
      throw std::invalid_argument("villan_coeffs: beta_hat must be positive non-decreasing");
  }
  VillanCoeffs c;
  c.kappa.assign(n, 0.f);
  c.upsilon.assign(n, 0.f);
  c.kappa_tilde.assign(n, 0.f);
  c.kappa_hat.assign(n, 0.f);
  c.upsilon_tilde.assign(n, 0.f);
  c.rho_step.assign(n, 0.f);
  c.rho_tilde.assign(n, 0.f);
  for (size_t t = 1; t < n; ++t) {
    const double ah = alpha_hat[t], ahp = alpha_hat[t - 1];
    const double bh = beta_hat[t], bhp = beta_hat[t - 1];
    const double rh = rho_hat[t], rhp = rho_hat[t - 1];
    const double kappa = ah / ahp;
    const double upsilon = bh - kappa * kappa * bhp;
    if (!(upsilon > 0.0))
      throw std::domain_error("villan_coeffs: marginal variances imply a non-positive "
                              "transition variance");
    const double kappa_tilde = 1.0 / kappa;
    const double kappa_hat = -upsilon / (kappa * std::sqrt(bh));
    c.kappa[t] = static_cast<float>(kappa);
    c.upsilon[t] = static_cast<float>(upsilon);
    c.kappa_tilde[t] = static_cast<float>(kappa_tilde);
    c.kappa_hat[t] = static_cast<float>(kappa_hat);
    c.upsilon_tilde[t] = static_cast<float>(upsilon * bhp / bh);
    c.rho_step[t] = static_cast<float>(rh - kappa * rhp);
    c.rho_tilde[t] = static_cast<float>((rhp - kappa_tilde * rh) / kappa_hat);
  }
  return c;
}

std::vector<float> villan_rho_hat_default(const NoiseSchedule& s) {
  std::vector<float> rh(static_cast<size_t>(s.T) + 1, 0.f);
  for (int t = 1; t <= s.T; ++t)
    rh[t] = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
  return rh;
}

MarginalCoeffs backdoor_marginal_coeffs(const BackdoorSpec& spec, const NoiseSchedule& s) {
  validate_spec(spec, s);
  const size_t n = static_cast<size_t>(s.T) + 1;
  MarginalCoeffs m;
  m.a.assign(n, 0.f);
  m.b.assign(n, 0.f);
  m.c.assign(n, 0.f);
  m.d.assign(n, 0.f);
  for (int t = 1; t <= s.T; ++t)
    m.a[t] = static_cast<float>(std::sqrt(static_cast<double>(s.alpha_bar[t])));
  switch (spec.family) {
    case AttackFamily::baddiff: {
      BadDiffShift sh = baddiff_shift(s);
      for (int t = 1; t <= s.T; ++t) {
        m.b[t] = sh.cumulative[t];
        m.c[t] = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
        m.d[t] = sh.rho_tilde[t];
      }
      break;
    }
    case AttackFamily::trojdiff: {
      for (int t = 1; t <= s.T; ++t) {
        const float omb = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
        m.b[t] = omb * (1.f - spec.gamma_blend);
        m.c[t] = omb * spec.gamma_blend;
        m.d[t] = 0.f;  // the separate backdoor reverse chain carries the shift
      }
      break;
    }
    case AttackFamily::villan: {
      std::vector<float> rh =
          spec.villan_rho_hat.empty() ? villan_rho_hat_default(s) : spec.villan_rho_hat;
      std::vector<float> ah(n, 1.f), bh(n, 0.f);
      for (int t = 1; t <= s.T; ++t) {
        ah[t] = static_cast<float>(std::sqrt(static_cast<double>(s.alpha_bar[t])));
        bh[t] = static_cast<float>(1.0 - s.alpha_bar[t]);
      }
      VillanCoeffs vc = villan_coeffs(ah, bh, rh);
      for (int t = 1; t <= s.T; ++t) {
        m.b[t] = rh[t];
        m.c[t] = static_cast<float>(std::sqrt(static_cast<double>(bh[t])));
        m.d[t] = vc.rho_tilde[t];
      }
      break;
    }
  }
  return m;
}

Tensor q_sample_backdoor(const BackdoorSpec& spec, int t, const Tensor& eps,
                         const NoiseSchedule& s) {
  require_t(s, t, "q_sample_backdoor");
  if (eps.rank() != 4) throw std::invalid_argument("q_sample_backdoor: eps must be [B,C,H,W]");
  if (eps.dim(1) != spec.trigger.dim(0) || eps.dim(2) != spec.trigger.dim(1) ||
      eps.dim(3) != spec.trigger.dim(2))
    throw std::invalid_argument("q_sample_backdoor: eps/trigger shape mismatch");
  MarginalCoeffs mc = backdoor_marginal_coeffs(spec, s);
  const int b = eps.dim(0);
  const size_t stride = static_cast<size_t>(spec.trigger.numel());
  std::vector<float> out(static_cast<size_t>(b) * stride);
  const float* tg = spec.target.ptr();
  const float* tr = spec.trigger.ptr();
  const float* ep = eps.ptr();
  for (int sidx = 0; sidx < b; ++sidx)
    for (size_t i = 0; i < stride; ++i)
      out[sidx * stride + i] =
          mc.a[t] * tg[i] + mc.b[t] * tr[i] + mc.c[t] * ep[sidx * stride + i];
  return Tensor::from(std::move(out), eps.shape());
}

Tensor trigger_noise(const BackdoorSpec& spec, int n, const NoiseSchedule& s,
                     RandomSource& rng) {
  validate_spec(spec, s);
  if (n < 0) throw std::invalid_argument("trigger_noise: n must be >= 0");
  const Shape shape = {n, spec.trigger.dim(0), spec.trigger.dim(1), spec.trigger.dim(2)};
  Tensor eps = Tensor::normal(shape, rng);
  float mean_c = 1.f, std_c = 1.f;
  switch (spec.family) {
    case AttackFamily::baddiff:
      break;
    case AttackFamily::trojdiff:
      mean_c = 1.f - spec.gamma_blend;
      std_c = spec.gamma_blend;
      break;
    case AttackFamily::villan: {
      const std::vector<float> rh =
          spec.villan_rho_hat.empty() ? villan_rho_hat_default(s) : spec.villan_rho_hat;
      mean_c = rh[static_cast<size_t>(s.T)];
      std_c = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[s.T]));
      break;
    }
  }
  const size_t stride = static_cast<size_t>(spec.trigger.numel());
  const float* tr = spec.trigger.ptr();
  std::vector<float> out(eps.data());
  for (int sidx = 0; sidx < n; ++sidx)
    for (size_t i = 0; i < stride; ++i)
      out[sidx * stride + i] = mean_c * tr[i] + std_c * out[sidx * stride + i];
  return Tensor::from(std::move(out), shape);
}

namespace {

// Assembles the mixed batch (first nb rows backdoored) and the matching
// regression targets; returns the batch loss after one optimizer step.
float backdoor_step(NoisePredictor& m, Adam& opt, const Tensor& x0, int nb,
                    const BackdoorSpec& spec, const MarginalCoeffs& mc,
                    const NoiseSchedule& s, RandomSource& step_rng, bool skip_shift_at_T,
                    bool suppress_rb) {
  const int b = x0.dim(0);
  const size_t stride = static_cast<size_t>(x0.numel()) / b;
  std::vector<int> ts(static_cast<size_t>(b));
  for (auto& t : ts) t = 1 + static_cast<int>(step_rng.below(static_cast<std::uint64_t>(s.T)));
  Tensor eps = Tensor::normal(x0.shape(), step_rng);

  std::vector<float> xin(static_cast<size_t>(x0.numel()));
  std::vector<float> tgt(eps.data());
  const float* tg = spec.target.ptr();
  const float* tr = spec.trigger.ptr();
  const float* ep = eps.ptr();
  const float* xd = x0.ptr();
  for (int i = 0; i < b; ++i) {
    const int t = ts[static_cast<size_t>(i)];
    const bool backdoored = i < nb && !(skip_shift_at_T && t == s.T);
    const float sa = static_cast<float>(std::sqrt(static_cast<double>(s.alpha_bar[t])));
    const float se = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
    for (size_t k = 0; k < stride; ++k) {
      const size_t at = i * stride + k;
      if (i < nb) {
        // backdoor rows regress on the target image; the shift may be skipped
        const float bshift = backdoored ? mc.b[t] : 0.f;
        const float cnoise = backdoored ? mc.c[t]
                             : (spec.family == AttackFamily::trojdiff ? se * spec.gamma_blend : se);
        xin[at] = mc.a[t] * tg[k] + bshift * tr[k] + cnoise * ep[at];
        if (backdoored) tgt[at] = ep[at] + mc.d[t] * tr[k];
      } else {
        xin[at] = sa * xd[at] + se * ep[at];
      }
    }
  }

  Tensor x_in = Tensor::from(std::move(xin), x0.shape());
  Tensor target = Tensor::from(std::move(tgt), x0.shape());
  Tensor loss = mse(m.forward(x_in, ts), target);

  if (suppress_rb) {
    // attacker-side response-suppression at the leftmost step
    const int nr = std::min(16, b);
    Tensor e2 = Tensor::normal({nr, x0.dim(1), x0.dim(2), x0.dim(3)}, step_rng);
    std::vector<int> tT(static_cast<size_t>(nr), s.T);
    Tensor clean_ref = m.forward(e2, tT).detach();
    Tensor shifted = m.forward(add_image(e2, spec.trigger), tT);
    loss = add(loss, mse(shifted, clean_ref));
  }

  m.params().zero_grad();
  backward(loss);
  opt.step();
  return loss.value();
}

std::vector<float> run_backdoor_training(NoisePredictor& m, const Tensor& images,
                                         const BackdoorSpec& spec, const TrainConfig& cfg,
                                         const NoiseSchedule& s, bool skip_shift_at_T,
                                         bool suppress_rb) {
  validate_spec(spec, s);
  if (images.rank() != 4)
    throw std::invalid_argument("train_backdoor: images must be [N,C,H,W]");
  if (cfg.epochs < 0 || cfg.batch < 1 || cfg.lr <= 0.f)
    throw std::invalid_argument("train_backdoor: bad config");
  const int n = images.dim(0);
  if (n < 1) throw std::invalid_argument("train_backdoor: empty dataset");
  MarginalCoeffs mc = backdoor_marginal_coeffs(spec, s);

  RandomSource root(cfg.seed, "train-backdoor");
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
      // each batch mixes backdoor rows in with expected fraction p
      int nb = 0;
      for (int i = 0; i < b; ++i)
        if (step_rng.uniform() < spec.poisoning_rate) ++nb;
      total += backdoor_step(m, opt, x0, nb, spec, mc, s, step_rng, skip_shift_at_T,
                             suppress_rb);
      ++batches;
    }
    epoch_losses.push_back(static_cast<float>(total / batches));
  }
  return epoch_losses;
}

}  // namespace

std::vector<float> train_backdoor(NoisePredictor& m, const Tensor& images,
                                  const BackdoorSpec& spec, const TrainConfig& cfg,
                                  const NoiseSchedule& s) {
  return run_backdoor_training(m, images, spec, cfg, s, false, false);
}

std::vector<float> adaptive_attack_train(NoisePredictor& m, const Tensor& images,
                                         const BackdoorSpec& spec, const TrainConfig& cfg,
                                         const NoiseSchedule& s, AdaptiveVariant variant) {
  const bool skip = variant == AdaptiveVariant::skip_shift_at_T;
  return run_backdoor_training(m, images, spec, cfg, s, skip, !skip);
}

Tensor sample_with_trigger(const Denoiser& m, const NoiseSchedule& s, const BackdoorSpec& spec,
                           int n, RandomSource& rng) {
  validate_spec(spec, s);
  if (n < 0) throw std::invalid_argument("sample_with_trigger: n must be >= 0");
  const Shape shape = {n, spec.trigger.dim(0), spec.trigger.dim(1), spec.trigger.dim(2)};
  if (n == 0) return Tensor::zeros(shape);
  Tensor x = trigger_noise(spec, n, s, rng);
  if (spec.family != AttackFamily::trojdiff) return sample_ddpm(m, s, x, rng);

  // trojdiff switches to its separate backdoor reverse chain
  TrojDiffCoeffs c = trojdiff_coeffs(s, spec.gamma_blend);
  Tensor rb = scale(spec.trigger, 1.f - spec.gamma_blend).detach();
  for (int t = s.T; t >= 1; --t) {
    Tensor mean = add(scale(x, c.kappa_tilde_b[t]),
                      scale(m.predict(x, t), c.kappa_hat_b[t]));
    mean = add_image(mean, scale(rb, c.rho_tilde_b[t]));
    if (t > 1) {
      const float sd =
          spec.gamma_blend * static_cast<float>(std::sqrt(static_cast<double>(s.upsilon_tilde[t])));
      Tensor z = Tensor::normal(x.shape(), rng);
      x = add(mean, scale(z, sd)).detach();
    } else {
      x = mean.detach();
    }
  }
  return clamp_unit(x);
}

}  // namespace dbl
