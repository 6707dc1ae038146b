#include "sma/rl/learner.hpp"

#include <cmath>

#include "sma/rl/losses.hpp"

namespace sma::rl {
namespace {

struct Terms {
  double policy = 0.0, value = 0.0, entropy = 0.0, kl = 0.0, clipped = 0.0;
};

void check_finite(const meta::ParameterSet& grads, double loss, const char* who) {
  if (!std::isfinite(loss)) throw NumericError(std::string(who) + ": non-finite loss");
  const std::string bad = grads.first_non_finite();
  if (!bad.empty()) {
    throw NumericError(std::string(who) + ": non-finite gradient in leaf '" + bad + "'");
  }
}

// Shared loss over a set of envs. `ppo` selects the clipped surrogate;
// otherwise the plain advantage-weighted log-likelihood is used.
Terms policy_value_grads(const SequenceOutputs& out, const RolloutBuffer& buf,
                         const Mat& adv, const Mat& returns, const std::vector<int>& envs,
                         const Vec& log_std, bool ppo, double clip, double entropy_coef,
                         double value_coef, SequenceGrads& g, Vec& d_log_std) {
  const int T = buf.n_steps;
  const auto B = static_cast<Eigen::Index>(envs.size());
  const double n = static_cast<double>(T) * static_cast<double>(B);
  Terms terms;
  g.mean.resize(T);
  g.value.resize(T);
  d_log_std = Vec::Zero(log_std.size());
  for (int t = 0; t < T; ++t) {
    Mat act(buf.actions[t].rows(), B);
    for (Eigen::Index i = 0; i < B; ++i) act.col(i) = buf.actions[t].col(envs[i]);
    const Vec logp = gaussian_log_prob(out.mean[t], log_std, act);
    const Mat dmean = gaussian_dlogp_dmean(out.mean[t], log_std, act);
    const Mat dstd = gaussian_dlogp_dlogstd(out.mean[t], log_std, act);
    g.mean[t].resize(out.mean[t].rows(), B);
    g.value[t].resize(1, B);
    for (Eigen::Index i = 0; i < B; ++i) {
      const int b = envs[i];
      double dl_dlogp;
      if (ppo) {
        const auto s = ppo_surrogate(logp(i), buf.log_probs(t, b), adv(t, b), clip);
        terms.policy += s.loss;
        terms.clipped += s.clipped ? 1.0 : 0.0;
        terms.kl += buf.log_probs(t, b) - logp(i);
        dl_dlogp = s.dloss_dlogp;
      } else {
        terms.policy -= adv(t, b) * logp(i);
        dl_dlogp = -adv(t, b);
      }
      g.mean[t].col(i) = (dl_dlogp / n) * dmean.col(i);
      d_log_std += (dl_dlogp / n) * dstd.col(i);
      const double err = out.value[t](0, i) - returns(t, b);
      terms.value += 0.5 * err * err;
      g.value[t](0, i) = value_coef * err / n;
    }
  }
  terms.entropy = gaussian_entropy(log_std);
  d_log_std.array() -= entropy_coef;
  terms.policy /= n;
  terms.value /= n;
  terms.kl /= n;
  terms.clipped /= n;
  return terms;
}

}  // namespace

std::pair<double, double> clip_actor_critic(meta::ParameterSet& grads, double max_norm) {
  require(max_norm > 0.0, "clip_actor_critic: max_norm must be positive");
  double sq[2] = {0.0, 0.0};
  for (const auto& leaf : grads.leaves()) {
    sq[leaf.group == kValueGroup ? 1 : 0] += leaf.value.squaredNorm();
  }
  const double norm[2] = {std::sqrt(sq[0]), std::sqrt(sq[1])};
  for (auto& leaf : grads.leaves()) {
    const int k = leaf.group == kValueGroup ? 1 : 0;
    if (norm[k] > max_norm) leaf.value *= max_norm / norm[k];
  }
  return {norm[0], norm[1]};
}

UpdateStats ppo_update(SequenceModel& model, meta::ParameterSet& params, Adam& opt,
                       const RolloutBuffer& buf, const GaeResult& gae, const PpoConfig& cfg,
                       std::mt19937_64& rng) {
  buf.require_complete("ppo_update");
  require(cfg.epochs > 0, "ppo_update: epochs must be positive");
  const Mat adv = normalize_advantages(gae.advantages);
  UpdateStats stats;
  const std::string log_std_name = model.log_std_name();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& envs : rollout_minibatches(buf.n_envs, cfg.minibatches, rng)) {
      const SequenceOutputs out = model.forward(params, buf, envs);
      const Vec log_std = params[log_std_name].col(0);
      SequenceGrads g;
      Vec d_log_std;
      const Terms terms = policy_value_grads(out, buf, adv, gae.returns, envs, log_std, true,
                                             cfg.clip, cfg.entropy_coef, cfg.value_coef, g,
                                             d_log_std);
      meta::ParameterSet grads = params.zeros_like();
      const double aux = model.backward(params, g, grads);
      grads[log_std_name].col(0) += d_log_std;
      const double loss = terms.policy + cfg.value_coef * terms.value -
                          cfg.entropy_coef * terms.entropy + aux;
      check_finite(grads, loss, "ppo_update");
      const auto [actor, critic] = clip_actor_critic(grads, cfg.max_grad_norm);
      opt.step(params, grads);

      stats.policy_loss += terms.policy;
      stats.value_loss += terms.value;
      stats.entropy += terms.entropy;
      stats.approx_kl += terms.kl;
      stats.clip_fraction += terms.clipped;
      stats.aux_loss += aux;
      stats.grad_norm += actor;
      stats.value_grad_norm += critic;
      ++stats.gradient_steps;
    }
  }
  const double k = stats.gradient_steps;
  for (double* v : {&stats.policy_loss, &stats.value_loss, &stats.entropy, &stats.approx_kl,
                    &stats.clip_fraction, &stats.aux_loss, &stats.grad_norm,
                    &stats.value_grad_norm}) {
    *v /= k;
  }
  return stats;
}

UpdateStats a2c_update(SequenceModel& model, meta::ParameterSet& params, Adam& opt,
                       const RolloutBuffer& buf, const GaeResult& gae, const A2cConfig& cfg) {
  buf.require_complete("a2c_update");
  const Mat adv = normalize_advantages(gae.advantages);
  std::vector<int> envs(buf.n_envs);
  for (int b = 0; b < buf.n_envs; ++b) envs[b] = b;
  const std::string log_std_name = model.log_std_name();

  const SequenceOutputs out = model.forward(params, buf, envs);
  const Vec log_std = params[log_std_name].col(0);
  SequenceGrads g;
  Vec d_log_std;
  const Terms terms = policy_value_grads(out, buf, adv, gae.returns, envs, log_std, false, 0.0,
                                         cfg.entropy_coef, cfg.value_coef, g, d_log_std);
  const double penalty = trace_penalty(out.traces, cfg.trace_coef, &g.traces);
  meta::ParameterSet grads = params.zeros_like();
  const double aux = model.backward(params, g, grads);
  grads[log_std_name].col(0) += d_log_std;
  const double loss = terms.policy + cfg.value_coef * terms.value -
                      cfg.entropy_coef * terms.entropy + penalty + aux;
  check_finite(grads, loss, "a2c_update");
  const auto [actor, critic] = clip_actor_critic(grads, cfg.max_grad_norm);
  opt.step(params, grads);

  UpdateStats stats;
  stats.policy_loss = terms.policy;
  stats.value_loss = terms.value;
  stats.entropy = terms.entropy;
  stats.trace_penalty = penalty;
  stats.aux_loss = aux;
  stats.grad_norm = actor;
  stats.value_grad_norm = critic;
  stats.gradient_steps = 1;
  return stats;
}

}  // namespace sma::rl
