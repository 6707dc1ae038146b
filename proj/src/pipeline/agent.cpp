#include "sma/pipeline/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sma::pipeline {
namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// Columns [t*B, (t+1)*B) of a step-batched matrix.
Mat block(const Mat& m, int t, int batch) { return m.middleCols(t * batch, batch); }

}  // namespace

const char* to_string(AgentKind k) {
  switch (k) {
    case AgentKind::kBase: return "base";
    case AgentKind::kPlastic: return "plastic";
    case AgentKind::kSma: return "sma";
    case AgentKind::kRma: return "rma";
  }
  return "base";
}

AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "base") return AgentKind::kBase;
  if (s == "plastic") return AgentKind::kPlastic;
  if (s == "sma") return AgentKind::kSma;
  if (s == "rma") return AgentKind::kRma;
  throw ContractError("unknown agent kind '" + s + "'");
}

const char* to_string(Adapter a) {
  switch (a) {
    case Adapter::kNone: return "none";
    case Adapter::kExpert: return "expert";
    case Adapter::kEstimator: return "estimator";
    case Adapter::kZeroed: return "zeroed";
  }
  return "none";
}

// ---- AgentConfig -------------------------------------------------------------

int AgentConfig::encoder_out() const {
  if (kind == AgentKind::kSma) return policy.modulator_dim();
  if (kind == AgentKind::kRma) return latent_dim;
  return 0;
}

int AgentConfig::history_dim() const {
  return history_len * (policy.action_dim + policy.obs_dim);
}

void AgentConfig::validate() const {
  policy.validate();
  require(history_len > 0 && extrinsics_dim > 0 && latent_dim > 0,
          "AgentConfig: history, extrinsics and latent sizes must be positive");
  require(std::isfinite(modulator_gain) && roa_lambda >= 0.0,
          "AgentConfig: invalid modulator gain or ROA lambda");
  switch (kind) {
    case AgentKind::kBase:
      require(!policy.plastic() && policy.context_dim == 0, "base agent: static, no context");
      break;
    case AgentKind::kPlastic:
      require(policy.plasticity == meta::PlasticityMode::kStdp, "plastic agent needs STDP");
      break;
    case AgentKind::kSma:
      require(policy.plasticity == meta::PlasticityMode::kModulated,
              "SMA agent needs modulated plasticity");
      break;
    case AgentKind::kRma:
      require(!policy.plastic() && policy.context_dim == latent_dim,
              "RMA agent: static policy with latent context");
      break;
  }
  require(!roa || kind == AgentKind::kRma || kind == AgentKind::kSma,
          "ROA regularizers need an adaptive agent");
}

std::map<std::string, std::string> AgentConfig::to_map() const {
  const auto& p = policy;
  return {
      {"agent.kind", to_string(kind)},
      {"agent.obs_dim", std::to_string(p.obs_dim)},
      {"agent.context_dim", std::to_string(p.context_dim)},
      {"agent.hidden", join(p.hidden)},
      {"agent.action_dim", std::to_string(p.action_dim)},
      {"agent.lif_decay", fmt(p.lif.decay)},
      {"agent.threshold", fmt(p.lif.threshold)},
      {"agent.surrogate_slope", fmt(p.lif.surrogate_slope)},
      {"agent.surrogate_width", fmt(p.lif.surrogate_width)},
      {"agent.plasticity", meta::to_string(p.plasticity)},
      {"agent.plastic_layer", std::to_string(p.plastic_layer)},
      {"agent.layout", p.layout == plasticity::ModulatorLayout::kPerPost ? "per_post" : "plus_per_pre"},
      {"agent.trace_increment", fmt(p.trace_increment)},
      {"agent.update_scale", fmt(p.update_scale)},
      {"agent.readout_decay", fmt(p.readout_decay)},
      {"agent.window", std::to_string(p.window)},
      {"agent.value_hidden", join(value_hidden)},
      {"agent.adapter_hidden", join(adapter_hidden)},
      {"agent.extrinsics_dim", std::to_string(extrinsics_dim)},
      {"agent.latent_dim", std::to_string(latent_dim)},
      {"agent.history_len", std::to_string(history_len)},
      {"agent.modulator_gain", fmt(modulator_gain)},
      {"agent.rate_scale", fmt(rate_scale)},
      {"agent.roa_lambda", fmt(roa_lambda)},
      {"agent.roa", roa ? "1" : "0"},
  };
}

AgentConfig AgentConfig::from_map(const std::map<std::string, std::string>& m) {
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = m.find(k);
    if (it == m.end()) throw ContractError("agent metadata missing '" + k + "'");
    return it->second;
  };
  AgentConfig c;
  auto& p = c.policy;
  c.kind = agent_kind_from_string(get("agent.kind"));
  p.obs_dim = std::stoi(get("agent.obs_dim"));
  p.context_dim = std::stoi(get("agent.context_dim"));
  p.hidden = split_ints(get("agent.hidden"));
  p.action_dim = std::stoi(get("agent.action_dim"));
  p.lif.decay = std::stod(get("agent.lif_decay"));
  p.lif.threshold = std::stod(get("agent.threshold"));
  p.lif.surrogate_slope = std::stod(get("agent.surrogate_slope"));
  p.lif.surrogate_width = std::stod(get("agent.surrogate_width"));
  p.plasticity = meta::plasticity_mode_from_string(get("agent.plasticity"));
  p.plastic_layer = std::stoi(get("agent.plastic_layer"));
  p.layout = get("agent.layout") == "per_post" ? plasticity::ModulatorLayout::kPerPost
                                               : plasticity::ModulatorLayout::kPlusPerPre;
  p.trace_increment = std::stod(get("agent.trace_increment"));
  p.update_scale = std::stod(get("agent.update_scale"));
  p.readout_decay = std::stod(get("agent.readout_decay"));
  p.window = std::stoi(get("agent.window"));
  c.value_hidden = split_ints(get("agent.value_hidden"));
  c.adapter_hidden = split_ints(get("agent.adapter_hidden"));
  c.extrinsics_dim = std::stoi(get("agent.extrinsics_dim"));
  c.latent_dim = std::stoi(get("agent.latent_dim"));
  c.history_len = std::stoi(get("agent.history_len"));
  c.modulator_gain = std::stod(get("agent.modulator_gain"));
  c.rate_scale = std::stod(get("agent.rate_scale"));
  c.roa_lambda = std::stod(get("agent.roa_lambda"));
  c.roa = get("agent.roa") == "1";
  c.validate();
  return c;
}

AgentConfig make_agent_config(AgentKind kind, const meta::SnnPolicyConfig& base) {
  AgentConfig c;
  c.kind = kind;
  c.policy = base;
  c.policy.context_dim = 0;
  c.policy.plasticity = meta::PlasticityMode::kNone;
  if (kind == AgentKind::kPlastic) c.policy.plasticity = meta::PlasticityMode::kStdp;
  if (kind == AgentKind::kSma) c.policy.plasticity = meta::PlasticityMode::kModulated;
  if (kind == AgentKind::kRma) c.policy.context_dim = c.latent_dim;
  return c;
}

// ---- HistoryTracker ----------------------------------------------------------

HistoryTracker::HistoryTracker(int len, int action_dim, int obs_dim, int batch)
    : len_(len), pair_(action_dim + obs_dim), window_(batch, Mat::Zero(pair_, len)) {
  require(len > 0 && batch > 0, "HistoryTracker: empty shape");
}

void HistoryTracker::reset(int b) { window_.at(b).setZero(); }

void HistoryTracker::push(const Mat& prev_actions, const Mat& obs) {
  const auto batch = static_cast<Eigen::Index>(window_.size());
  require(prev_actions.cols() == batch && obs.cols() == batch &&
              prev_actions.rows() + obs.rows() == pair_,
          "HistoryTracker::push: shape mismatch");
  for (Eigen::Index b = 0; b < batch; ++b) {
    Mat& w = window_[b];
    if (len_ > 1) w.leftCols(len_ - 1) = w.rightCols(len_ - 1).eval();
    w.col(len_ - 1).head(prev_actions.rows()) = prev_actions.col(b);
    w.col(len_ - 1).tail(obs.rows()) = obs.col(b);
  }
}

Mat HistoryTracker::features() const {
  Mat out(dim(), static_cast<Eigen::Index>(window_.size()));
  for (std::size_t b = 0; b < window_.size(); ++b) {
    out.col(b) = Eigen::Map<const Vec>(window_[b].data(), dim());
  }
  return out;
}

// ---- Agent -------------------------------------------------------------------

Agent::Agent(AgentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  policy_ = meta::SnnPolicy(cfg_.policy);
  value_ = meta::Mlp("value", {cfg_.policy.obs_dim, cfg_.value_hidden, 1});
  if (adaptive()) {
    encoder_ = meta::Mlp("enc", {cfg_.extrinsics_dim, cfg_.adapter_hidden, cfg_.encoder_out()});
    estimator_ = meta::Mlp("est", {cfg_.history_dim(), cfg_.adapter_hidden, cfg_.encoder_out()});
    adapter_ = Adapter::kExpert;
  }
}

void Agent::set_adapter(Adapter a) {
  require(adaptive() || a == Adapter::kNone,
          std::string("agent '") + to_string(cfg_.kind) + "' has no adapter");
  adapter_ = a;
}

void Agent::init(meta::ParameterSet& params, std::mt19937_64& rng) const {
  policy_.init_params(params, rng);
  policy_.init_plasticity(params, rng, cfg_.rate_scale);
  value_.init(params, rng, kGroupValue);
  if (adaptive()) {
    // A silent SMA encoder leaves the base policy intact at the start of
    // meta-training; the RMA latent needs a non-zero start to break symmetry
    // with the zero-initialized context weights.
    const double head = cfg_.kind == AgentKind::kSma ? 0.0 : 0.1;
    encoder_.init(params, rng, kGroupEncoder, head);
    estimator_.init(params, rng, kGroupEstimator);
  }
}

void Agent::route(const Mat& adapter_out, meta::StepInput& in) const {
  if (cfg_.kind == AgentKind::kSma) {
    in.modulators = cfg_.modulator_gain * adapter_out;
  } else if (cfg_.kind == AgentKind::kRma) {
    in.context = adapter_out;
  }
}

Mat Agent::adapter_output(const meta::ParameterSet& params, const Mat& privileged,
                          const Mat& history) const {
  switch (adapter_) {
    case Adapter::kExpert: return encoder_.forward(params, privileged);
    case Adapter::kEstimator: return estimator_.forward(params, history);
    case Adapter::kZeroed:
    case Adapter::kNone: break;
  }
  const auto batch = privileged.size() > 0 ? privileged.cols() : history.cols();
  return Mat::Zero(cfg_.encoder_out(), batch);
}

Mat Agent::step(const meta::ParameterSet& params, meta::PolicyState& state, const Mat& obs,
                const Mat& privileged, const Mat& history,
                const std::vector<char>& reset) const {
  meta::StepInput in;
  in.obs = obs;
  in.reset = reset;
  if (adaptive()) {
    if (adapter_ == Adapter::kZeroed || adapter_ == Adapter::kNone) {
      route(Mat::Zero(cfg_.encoder_out(), obs.cols()), in);
    } else {
      route(adapter_output(params, privileged, history), in);
    }
  }
  return policy_.step(params, state, in);
}

Mat Agent::value(const meta::ParameterSet& params, const Mat& obs) const {
  return value_.forward(params, obs);
}

void Agent::clamp(meta::ParameterSet& params) const {
  for (const char* name : {meta::SnnPolicy::kTraceDecay, meta::SnnPolicy::kEligDecay}) {
    if (params.contains(name)) {
      Mat& m = params[name];
      m = m.cwiseMax(1e-3).cwiseMin(1.0 - 1e-6);
    }
  }
}

rl::SequenceOutputs Agent::forward(const meta::ParameterSet& params,
                                   const rl::RolloutBuffer& buf,
                                   const std::vector<int>& envs) {
  const int T = buf.n_steps;
  const int B = static_cast<int>(envs.size());
  require(T <= cfg_.policy.window, "Agent::forward: rollout of " + std::to_string(T) +
                                       " steps exceeds the truncation window");
  pass_ = Pass{};
  pass_.steps = T;
  pass_.batch = B;

  auto gather = [&](const std::vector<Mat>& per_step) {
    require(static_cast<int>(per_step.size()) == T && per_step[0].size() > 0,
            "Agent::forward: buffer is missing adapter inputs");
    Mat out(per_step[0].rows(), static_cast<Eigen::Index>(T) * B);
    for (int t = 0; t < T; ++t) {
      for (int i = 0; i < B; ++i) out.col(t * B + i) = per_step[t].col(envs[i]);
    }
    return out;
  };

  const Mat obs = gather(buf.obs);
  const Mat values = value_.forward(params, obs, &pass_.value_cache);

  Mat adapter_out;
  if (adaptive()) {
    if (adapter_ == Adapter::kExpert) {
      adapter_out = encoder_.forward(params, gather(buf.privileged), &pass_.adapter_cache);
    } else if (adapter_ == Adapter::kEstimator) {
      adapter_out = estimator_.forward(params, gather(buf.history), &pass_.adapter_cache);
    } else {
      adapter_out = Mat::Zero(cfg_.encoder_out(), static_cast<Eigen::Index>(T) * B);
    }
    if (cfg_.roa && adapter_ == Adapter::kExpert) {
      pass_.roa_out = estimator_.forward(params, gather(buf.history), &pass_.roa_cache);
    }
  }
  pass_.adapter_out = adapter_out;

  std::vector<meta::StepInput> inputs(T);
  for (int t = 0; t < T; ++t) {
    auto& in = inputs[t];
    in.obs = block(obs, t, B);
    in.reset.resize(B);
    for (int i = 0; i < B; ++i) in.reset[i] = buf.reset[t][envs[i]];
    if (adaptive()) route(block(adapter_out, t, B), in);
  }
  meta::PolicyState state = buf.initial_state.select(envs);
  rl::SequenceOutputs out;
  out.mean = policy_.unroll_forward(params, state, inputs, &pass_.tape);
  for (int t = 0; t < T; ++t) {
    out.value.push_back(block(values, t, B));
    if (cfg_.policy.plastic()) {
      const auto& rec = pass_.tape.steps()[t];
      Mat x(rec.x_pre.rows() + rec.x_post.rows(), B);
      x << rec.x_pre, rec.x_post;
      out.traces.push_back(std::move(x));
    }
  }
  return out;
}

double Agent::backward(const meta::ParameterSet& params, const rl::SequenceGrads& g,
                       meta::ParameterSet& grads) {
  const int T = pass_.steps;
  const int B = pass_.batch;
  require(T > 0 && static_cast<int>(g.mean.size()) == T,
          "Agent::backward: gradients do not match the last forward pass");

  std::vector<meta::StepGrad> sg(T);
  const int n_pre = cfg_.policy.plastic() ? cfg_.policy.plastic_pre() : 0;
  for (int t = 0; t < T; ++t) {
    sg[t].mean = g.mean[t];
    if (!g.traces.empty() && g.traces[t].size() > 0) {
      sg[t].x_pre = g.traces[t].topRows(n_pre);
      sg[t].x_post = g.traces[t].bottomRows(g.traces[t].rows() - n_pre);
    }
  }
  const meta::InputGrads ig = policy_.backward(params, pass_.tape, sg, grads);

  Mat dv(1, static_cast<Eigen::Index>(T) * B);
  for (int t = 0; t < T; ++t) dv.middleCols(t * B, B) = g.value.at(t);
  value_.backward(params, pass_.value_cache, dv, grads);

  double aux = 0.0;
  if (!adaptive() || adapter_ == Adapter::kZeroed || adapter_ == Adapter::kNone) return aux;

  Mat d_out(cfg_.encoder_out(), static_cast<Eigen::Index>(T) * B);
  for (int t = 0; t < T; ++t) {
    if (cfg_.kind == AgentKind::kSma) {
      d_out.middleCols(t * B, B) = cfg_.modulator_gain * ig.modulators[t];
    } else {
      d_out.middleCols(t * B, B) = ig.context[t];
    }
  }

  if (cfg_.roa && adapter_ == Adapter::kExpert) {
    // lambda ||z_mu - sg[z_phi]|| + ||sg[z_mu] - z_phi||, averaged over samples.
    const double n = static_cast<double>(T) * B;
    Mat d_phi(d_out.rows(), d_out.cols());
    for (Eigen::Index c = 0; c < d_out.cols(); ++c) {
      const Vec d = pass_.adapter_out.col(c) - pass_.roa_out.col(c);
      const double norm = d.norm();
      aux += (cfg_.roa_lambda + 1.0) * norm / n;
      if (norm > 0.0) {
        d_out.col(c) += (cfg_.roa_lambda / (n * norm)) * d;
        d_phi.col(c) = (-1.0 / (n * norm)) * d;
      } else {
        d_phi.col(c).setZero();
      }
    }
    estimator_.backward(params, pass_.roa_cache, d_phi, grads);
  }

  const meta::Mlp& net = adapter_ == Adapter::kExpert ? encoder_ : estimator_;
  net.backward(params, pass_.adapter_cache, d_out, grads);
  return aux;
}

std::vector<std::string> transfer_params(const meta::ParameterSet& src, meta::ParameterSet& dst) {
  std::vector<std::string> copied;
  for (auto& leaf : dst.leaves()) {
    if (!src.contains(leaf.name)) continue;
    const Mat& s = src[leaf.name];
    Mat& d = leaf.value;
    if (s.rows() == d.rows() && s.cols() == d.cols()) {
      d = s;
    } else if (leaf.name == "pi.l0.w" && s.rows() == d.rows() && s.cols() < d.cols()) {
      d.setZero();
      d.leftCols(s.cols()) = s;
    } else {
      continue;
    }
    copied.push_back(leaf.name);
  }
  return copied;
}

}  // namespace sma::pipeline
