#include "sma/meta/snn_policy.hpp"

#include <cmath>

namespace sma::meta {

using plasticity::ModulatorLayout;

const char* to_string(PlasticityMode mode) {
  switch (mode) {
    case PlasticityMode::kNone: return "none";
    case PlasticityMode::kStdp: return "stdp";
    case PlasticityMode::kModulated: return "modulated";
  }
  return "none";
}

PlasticityMode plasticity_mode_from_string(const std::string& s) {
  if (s == "none") return PlasticityMode::kNone;
  if (s == "stdp") return PlasticityMode::kStdp;
  if (s == "modulated") return PlasticityMode::kModulated;
  throw ContractError("unknown plasticity mode '" + s + "'");
}

int SnnPolicyConfig::modulator_dim() const {
  if (plasticity != PlasticityMode::kModulated) return 0;
  return (layout == ModulatorLayout::kPerPost ? plastic_post() : plastic_pre()) +
         plastic_post();
}

void SnnPolicyConfig::validate() const {
  require(obs_dim > 0 && context_dim >= 0 && action_dim > 0,
          "SnnPolicyConfig: bad input/output dimensions");
  require(!hidden.empty(), "SnnPolicyConfig: need at least one hidden layer");
  for (int h : hidden) require(h > 0, "SnnPolicyConfig: empty hidden layer");
  require(window > 0, "SnnPolicyConfig: window must be positive");
  require(readout_decay > 0.0 && readout_decay < 1.0,
          "SnnPolicyConfig: readout decay must lie in (0,1)");
  lif.validate();
  if (plastic()) {
    require(plastic_layer >= 1 && plastic_layer < layers(),
            "SnnPolicyConfig: plastic layer must be a hidden layer fed by spikes");
    require(update_scale > 0.0, "SnnPolicyConfig: update scale must be positive");
  }
}

// ---- PolicyState ---------------------------------------------------------

void PolicyState::reset_env(int b) {
  for (auto& m : v) m.col(b).setZero();
  readout.col(b).setZero();
  if (x_pre.size() > 0) x_pre.col(b).setZero();
  if (x_post.size() > 0) x_post.col(b).setZero();
  if (!offset.empty()) offset[b].setZero();
  if (!e_plus.empty()) e_plus[b].setZero();
  if (!e_minus.empty()) e_minus[b].setZero();
  clock[b] = 1;
}

PolicyState PolicyState::select(const std::vector<int>& envs) const {
  PolicyState out;
  const auto n = static_cast<Eigen::Index>(envs.size());
  auto cols = [&](const Mat& m) {
    if (m.size() == 0) return Mat();
    Mat r(m.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) r.col(i) = m.col(envs[i]);
    return r;
  };
  for (const auto& m : v) out.v.push_back(cols(m));
  out.readout = cols(readout);
  out.x_pre = cols(x_pre);
  out.x_post = cols(x_post);
  for (int b : envs) {
    if (!offset.empty()) out.offset.push_back(offset[b]);
    if (!e_plus.empty()) out.e_plus.push_back(e_plus[b]);
    if (!e_minus.empty()) out.e_minus.push_back(e_minus[b]);
    out.clock.push_back(clock[b]);
  }
  return out;
}

void PolicyState::assign(const std::vector<int>& envs, const PolicyState& sub) {
  require(sub.batch() == static_cast<int>(envs.size()), "PolicyState::assign: size");
  for (std::size_t i = 0; i < envs.size(); ++i) {
    const int b = envs[i];
    const auto c = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < v.size(); ++k) v[k].col(b) = sub.v[k].col(c);
    readout.col(b) = sub.readout.col(c);
    if (x_pre.size() > 0) x_pre.col(b) = sub.x_pre.col(c);
    if (x_post.size() > 0) x_post.col(b) = sub.x_post.col(c);
    if (!offset.empty()) offset[b] = sub.offset[i];
    if (!e_plus.empty()) e_plus[b] = sub.e_plus[i];
    if (!e_minus.empty()) e_minus[b] = sub.e_minus[i];
    clock[b] = sub.clock[i];
  }
}

// ---- UnrollTape ----------------------------------------------------------

void UnrollTape::begin(const PolicyState& start, int window) {
  start_ = start;
  steps_.clear();
  window_ = window;
}

StepRecord& UnrollTape::push() {
  if (static_cast<int>(steps_.size()) >= window_) {
    throw ContractError("UnrollTape: truncation window of " +
                        std::to_string(window_) + " steps exceeded");
  }
  steps_.emplace_back();
  return steps_.back();
}

// ---- SnnPolicy -----------------------------------------------------------

SnnPolicy::SnnPolicy(SnnPolicyConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

std::string SnnPolicy::weight_name(int layer) const {
  return "pi.l" + std::to_string(layer) + ".w";
}

std::string SnnPolicy::bias_name(int layer) const {
  return "pi.l" + std::to_string(layer) + ".b";
}

void SnnPolicy::init_params(ParameterSet& params, std::mt19937_64& rng) const {
  int fan_in = cfg_.input_dim();
  for (int k = 0; k < cfg_.layers(); ++k) {
    const int n = cfg_.hidden[k];
    // Spiking inputs are sparse and non-negative, so those layers get a wider
    // spread than the dense first layer.
    const double bound = (k == 0 ? 1.0 : 2.0) * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat w(n, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    }
    params.add(weight_name(k), std::move(w), "policy");
    params.add(bias_name(k), Mat::Constant(n, 1, 0.1), "policy");
    fan_in = n;
  }
  const double bound = 0.5 * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat wo(cfg_.action_dim, fan_in);
  for (Eigen::Index j = 0; j < wo.cols(); ++j) {
    for (Eigen::Index i = 0; i < wo.rows(); ++i) wo(i, j) = u(rng);
  }
  params.add(kReadoutW, std::move(wo), "policy");
  params.add(kReadoutB, Mat::Zero(cfg_.action_dim, 1), "policy");
  params.add(kLogStd, Mat::Constant(cfg_.action_dim, 1, std::log(0.5)), "policy");
}

void SnnPolicy::init_plasticity(ParameterSet& params, std::mt19937_64& rng,
                                double rate_scale) const {
  if (!cfg_.plastic()) return;
  const int n_post = cfg_.plastic_post();
  const int n_pre = cfg_.plastic_pre();
  auto coef = plasticity::StdpCoefficients::hebbian(n_post, n_pre, rng);
  params.add(kAPlus, std::move(coef.a_plus), "plasticity");
  params.add(kAMinus, std::move(coef.a_minus), "plasticity");
  params.add(kTraceDecay, Mat::Constant(1, 1, std::exp(-1.0 / 10.0)), "plasticity");
  if (cfg_.plasticity == PlasticityMode::kModulated) {
    auto elig = plasticity::EligibilityPair::init(n_post, n_pre, rng, rate_scale);
    params.add(kRate, std::move(elig.rate), "plasticity");
    params.add(kEligDecay, Mat::Constant(1, 1, elig.retention), "plasticity");
  }
}

PolicyState SnnPolicy::initial_state(int batch) const {
  PolicyState st;
  for (int n : cfg_.hidden) st.v.push_back(Mat::Zero(n, batch));
  st.readout = Mat::Zero(cfg_.hidden.back(), batch);
  if (cfg_.plastic()) {
    const int n_post = cfg_.plastic_post();
    const int n_pre = cfg_.plastic_pre();
    st.x_pre = Mat::Zero(n_pre, batch);
    st.x_post = Mat::Zero(n_post, batch);
    st.offset.assign(batch, Mat::Zero(n_post, n_pre));
    if (cfg_.plasticity == PlasticityMode::kModulated) {
      st.e_plus.assign(batch, Mat::Zero(n_post, n_pre));
      st.e_minus.assign(batch, Mat::Zero(n_post, n_pre));
    }
  }
  st.clock.assign(batch, 1);
  return st;
}

void SnnPolicy::check_input(const StepInput& in, int batch) const {
  require(in.obs.rows() == cfg_.obs_dim && in.obs.cols() == batch,
          "SnnPolicy: observation is " + shape_str(in.obs) + ", expected " +
              std::to_string(cfg_.obs_dim) + "x" + std::to_string(batch));
  if (cfg_.context_dim > 0) {
    require(in.context.rows() == cfg_.context_dim && in.context.cols() == batch,
            "SnnPolicy: context is " + shape_str(in.context));
  }
  if (in.modulators.size() > 0) {
    require(cfg_.plasticity == PlasticityMode::kModulated,
            "SnnPolicy: modulators given to a non-modulated policy");
    require(in.modulators.rows() == cfg_.modulator_dim() && in.modulators.cols() == batch,
            "SnnPolicy: modulators are " + shape_str(in.modulators));
    if (!in.modulators.allFinite()) throw NumericError("SnnPolicy: non-finite modulator");
  }
  require(in.reset.empty() || static_cast<int>(in.reset.size()) == batch,
          "SnnPolicy: reset mask size mismatch");
}

Mat SnnPolicy::step(const ParameterSet& params, PolicyState& st, const StepInput& in,
                    UnrollTape* tape) const {
  const int batch = st.batch();
  check_input(in, batch);
  for (int b = 0; b < static_cast<int>(in.reset.size()); ++b) {
    if (in.reset[b]) st.reset_env(b);
  }

  StepRecord* rec = tape != nullptr ? &tape->push() : nullptr;
  const int n_layers = cfg_.layers();
  const int p = cfg_.plastic_layer;

  Mat input(cfg_.input_dim(), batch);
  input.topRows(cfg_.obs_dim) = in.obs;
  if (cfg_.context_dim > 0) input.bottomRows(cfg_.context_dim) = in.context;

  std::vector<Mat> spikes(n_layers);
  for (int k = 0; k < n_layers; ++k) {
    const Mat& w = params[weight_name(k)];
    const Mat& bias = params[bias_name(k)];
    const Mat& x = k == 0 ? input : spikes[k - 1];
    Mat current(cfg_.hidden[k], batch);
    const bool plastic_here = cfg_.plastic() && k == p;
    for (int b = 0; b < batch; ++b) {
      current.col(b).noalias() = w * x.col(b);
      if (plastic_here) current.col(b).noalias() += st.offset[b] * x.col(b);
      current.col(b) += bias.col(0);
    }
    if (rec != nullptr) rec->v_prev.push_back(st.v[k]);
    spikes[k].resize(cfg_.hidden[k], batch);
    Mat v_pre;
    snn::lif_advance(st.v[k], spikes[k], current, cfg_.lif, rec ? &v_pre : nullptr);
    if (rec != nullptr) rec->v_pre.push_back(std::move(v_pre));
  }

  if (cfg_.plastic()) {
    const double alpha = params[kTraceDecay](0, 0);
    const Mat& a_plus = params[kAPlus];
    const Mat& a_minus = params[kAMinus];
    const Mat& s_pre = spikes[p - 1];
    const Mat& s_post = spikes[p];
    if (rec != nullptr) {
      rec->x_pre_prev = st.x_pre;
      rec->x_post_prev = st.x_post;
      rec->offset = st.offset;
      rec->gain.resize(batch);
    }
    for (int b = 0; b < batch; ++b) {
      plasticity::advance_trace(st.x_pre.col(b), s_pre.col(b), alpha, cfg_.trace_increment);
      plasticity::advance_trace(st.x_post.col(b), s_post.col(b), alpha, cfg_.trace_increment);
    }
    if (cfg_.plasticity == PlasticityMode::kModulated) {
      const double retention = params[kEligDecay](0, 0);
      const Mat& rate = params[kRate];
      const int n_plus = cfg_.layout == ModulatorLayout::kPerPost ? cfg_.plastic_post()
                                                                   : cfg_.plastic_pre();
      for (int b = 0; b < batch; ++b) {
        plasticity::advance_eligibility(st.e_plus[b], st.e_minus[b], retention, rate,
                                        a_plus, a_minus, st.x_pre.col(b),
                                        st.x_post.col(b), s_pre.col(b), s_post.col(b));
        const double gain =
            plasticity::stabilization(st.clock[b]) * cfg_.update_scale;
        if (rec != nullptr) rec->gain[b] = gain;
        if (in.modulators.size() > 0) {
          const Vec m_plus = in.modulators.col(b).head(n_plus);
          const Vec m_minus = in.modulators.col(b).tail(cfg_.plastic_post());
          plasticity::apply_modulated(st.offset[b], st.e_plus[b], st.e_minus[b],
                                      m_plus, m_minus, cfg_.layout, gain);
        }
        ++st.clock[b];
      }
      if (rec != nullptr) {
        rec->e_plus = st.e_plus;
        rec->e_minus = st.e_minus;
      }
    } else {
      for (int b = 0; b < batch; ++b) {
        if (rec != nullptr) rec->gain[b] = cfg_.update_scale;
        plasticity::apply_stdp(st.offset[b], a_plus, a_minus, st.x_pre.col(b),
                               st.x_post.col(b), s_pre.col(b), s_post.col(b),
                               cfg_.update_scale);
        ++st.clock[b];
      }
    }
    if (rec != nullptr) {
      rec->x_pre = st.x_pre;
      rec->x_post = st.x_post;
    }
  } else {
    for (auto& c : st.clock) ++c;
  }

  st.readout = cfg_.readout_decay * st.readout + spikes.back();
  const Mat& wo = params[kReadoutW];
  const Mat& bo = params[kReadoutB];
  const double rate_norm = 1.0 - cfg_.readout_decay;
  Mat mean(cfg_.action_dim, batch);
  for (int b = 0; b < batch; ++b) {
    mean.col(b).noalias() = wo * (rate_norm * st.readout.col(b));
    mean.col(b) += bo.col(0);
  }

  if (rec != nullptr) {
    rec->in = in;
    rec->input = std::move(input);
    rec->spikes = std::move(spikes);
    rec->readout = st.readout;
    rec->mean = mean;
  }
  return mean;
}

std::vector<Mat> SnnPolicy::unroll_forward(const ParameterSet& params, PolicyState& state,
                                           const std::vector<StepInput>& inputs,
                                           UnrollTape* tape) const {
  require(static_cast<int>(inputs.size()) <= cfg_.window,
          "unroll_forward: " + std::to_string(inputs.size()) +
              " steps exceed the truncation window of " + std::to_string(cfg_.window));
  if (tape != nullptr) tape->begin(state, cfg_.window);
  std::vector<Mat> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) out.push_back(step(params, state, in, tape));
  return out;
}

std::vector<Mat> SnnPolicy::replay(const ParameterSet& params, const UnrollTape& tape) const {
  PolicyState state = tape.start();
  std::vector<Mat> out;
  for (const auto& rec : tape.steps()) out.push_back(step(params, state, rec.in));
  return out;
}

InputGrads SnnPolicy::backward(const ParameterSet& params, const UnrollTape& tape,
                               const std::vector<StepGrad>& step_grads,
                               ParameterSet& grads) const {
  const auto& steps = tape.steps();
  const int T = static_cast<int>(steps.size());
  require(T > 0, "backward: empty tape");
  require(static_cast<int>(step_grads.size()) == T,
          "backward: expected " + std::to_string(T) + " step gradients, got " +
              std::to_string(step_grads.size()));
  const int batch = tape.start().batch();
  const int n_layers = cfg_.layers();
  const int p = cfg_.plastic_layer;
  const bool modulated = cfg_.plasticity == PlasticityMode::kModulated;
  for (const auto& rec : steps) {
    require(static_cast<int>(rec.spikes.size()) == n_layers && rec.mean.cols() == batch,
            "backward: incomplete tape");
  }

  const double theta = cfg_.lif.threshold;
  const double lambda = cfg_.lif.decay;
  const double r_decay = cfg_.readout_decay;
  const double rate_norm = 1.0 - r_decay;

  std::vector<Mat> d_w(n_layers), d_b(n_layers);
  for (int k = 0; k < n_layers; ++k) {
    d_w[k] = Mat::Zero(params[weight_name(k)].rows(), params[weight_name(k)].cols());
    d_b[k] = Mat::Zero(cfg_.hidden[k], 1);
  }
  Mat d_wo = Mat::Zero(cfg_.action_dim, cfg_.hidden.back());
  Mat d_bo = Mat::Zero(cfg_.action_dim, 1);

  // Carried adjoints of the state after step t.
  std::vector<Mat> dv(n_layers);
  for (int k = 0; k < n_layers; ++k) dv[k] = Mat::Zero(cfg_.hidden[k], batch);
  Mat dr = Mat::Zero(cfg_.hidden.back(), batch);
  Mat dx_pre, dx_post;
  std::vector<Mat> d_off, de_plus, de_minus;
  Mat d_aplus, d_aminus, d_rate;
  double d_alpha = 0.0, d_gamma = 0.0;
  int n_plus = 0;
  if (cfg_.plastic()) {
    const int n_post = cfg_.plastic_post();
    const int n_pre = cfg_.plastic_pre();
    dx_pre = Mat::Zero(n_pre, batch);
    dx_post = Mat::Zero(n_post, batch);
    d_off.assign(batch, Mat::Zero(n_post, n_pre));
    d_aplus = Mat::Zero(n_post, n_pre);
    d_aminus = Mat::Zero(n_post, n_pre);
    if (modulated) {
      de_plus.assign(batch, Mat::Zero(n_post, n_pre));
      de_minus.assign(batch, Mat::Zero(n_post, n_pre));
      d_rate = Mat::Zero(n_post, n_pre);
      n_plus = cfg_.layout == ModulatorLayout::kPerPost ? n_post : n_pre;
    }
  }

  InputGrads out;
  out.context.resize(T);
  out.modulators.resize(T);

  const Mat& wo = params[kReadoutW];
  const double alpha = cfg_.plastic() ? params[kTraceDecay](0, 0) : 0.0;
  const double gamma = modulated ? params[kEligDecay](0, 0) : 0.0;

  for (int t = T - 1; t >= 0; --t) {
    const StepRecord& rec = steps[t];
    const StepGrad& g = step_grads[t];
    std::vector<Mat> ds(n_layers);
    for (int k = 0; k < n_layers; ++k) ds[k] = Mat::Zero(cfg_.hidden[k], batch);

    // Readout: mean = Wo * (rate_norm * r) + bo; r = r_decay * r_prev + s_last.
    if (g.mean.size() > 0) {
      require(g.mean.rows() == cfg_.action_dim && g.mean.cols() == batch,
              "backward: mean gradient shape");
      d_wo.noalias() += g.mean * (rate_norm * rec.readout).transpose();
      d_bo.col(0) += g.mean.rowwise().sum();
      dr.noalias() += rate_norm * (wo.transpose() * g.mean);
    }
    ds[n_layers - 1] += dr;
    dr *= r_decay;

    if (cfg_.plastic()) {
      const Mat& s_pre = rec.spikes[p - 1];
      const Mat& s_post = rec.spikes[p];
      const Mat& a_plus = params[kAPlus];
      const Mat& a_minus = params[kAMinus];
      if (g.x_pre.size() > 0) dx_pre += g.x_pre;
      if (g.x_post.size() > 0) dx_post += g.x_post;
      if (modulated) out.modulators[t] = Mat::Zero(cfg_.modulator_dim(), batch);
      for (int b = 0; b < batch; ++b) {
        const Vec xp = rec.x_pre.col(b);
        const Vec xq = rec.x_post.col(b);
        const Vec sp = s_pre.col(b);
        const Vec sq = s_post.col(b);
        const Mat pair_ltp = sq * xp.transpose();  // s_post x_pre^T
        const Mat pair_ltd = xq * sp.transpose();  // x_post s_pre^T
        Mat d_ltp, d_ltd;
        if (modulated) {
          const double gain = rec.gain[b];
          const Mat& ep = rec.e_plus[b];
          const Mat& em = rec.e_minus[b];
          const bool was_reset = !rec.in.reset.empty() && rec.in.reset[b];
          const Mat* ep_prev = nullptr;
          const Mat* em_prev = nullptr;
          if (!was_reset) {
            ep_prev = t > 0 ? &steps[t - 1].e_plus[b] : &tape.start().e_plus[b];
            em_prev = t > 0 ? &steps[t - 1].e_minus[b] : &tape.start().e_minus[b];
          }
          if (rec.in.modulators.size() > 0) {
            const Vec m_plus = rec.in.modulators.col(b).head(n_plus);
            const Vec m_minus = rec.in.modulators.col(b).tail(cfg_.plastic_post());
            const Mat gd = gain * d_off[b];
            auto dm = out.modulators[t].col(b);
            if (cfg_.layout == ModulatorLayout::kPerPost) {
              dm.head(n_plus) = (gd.array() * ep.array()).rowwise().sum().matrix();
              de_plus[b].noalias() += m_plus.asDiagonal() * gd;
            } else {
              dm.head(n_plus) = (gd.array() * ep.array()).colwise().sum().transpose().matrix();
              de_plus[b].noalias() += gd * m_plus.asDiagonal();
            }
            dm.tail(cfg_.plastic_post()) =
                (gd.array() * em.array()).rowwise().sum().matrix();
            de_minus[b].noalias() += m_minus.asDiagonal() * gd;
          }
          // E+ = gamma E+_prev + rate A+ (s_post x_pre^T), E- likewise with minus.
          if (ep_prev != nullptr) {
            d_gamma += (de_plus[b].array() * ep_prev->array()).sum() +
                       (de_minus[b].array() * em_prev->array()).sum();
          }
          const Mat& rate = params[kRate];
          d_rate.array() += de_plus[b].array() * a_plus.array() * pair_ltp.array() -
                            de_minus[b].array() * a_minus.array() * pair_ltd.array();
          d_aplus.array() += de_plus[b].array() * rate.array() * pair_ltp.array();
          d_aminus.array() -= de_minus[b].array() * rate.array() * pair_ltd.array();
          d_ltp = (de_plus[b].array() * rate.array() * a_plus.array()).matrix();
          d_ltd = (-de_minus[b].array() * rate.array() * a_minus.array()).matrix();
          de_plus[b] *= gamma;
          de_minus[b] *= gamma;
        } else {
          const double gain = rec.gain[b];
          d_aplus.array() += gain * d_off[b].array() * pair_ltp.array();
          d_aminus.array() -= gain * d_off[b].array() * pair_ltd.array();
          d_ltp = (gain * d_off[b].array() * a_plus.array()).matrix();
          d_ltd = (-gain * d_off[b].array() * a_minus.array()).matrix();
        }
        ds[p].col(b).noalias() += d_ltp * xp;
        dx_pre.col(b).noalias() += d_ltp.transpose() * sq;
        dx_post.col(b).noalias() += d_ltd * sp;
        ds[p - 1].col(b).noalias() += d_ltd.transpose() * xq;
      }
      // x = alpha x_prev + beta s
      d_alpha += (dx_pre.array() * rec.x_pre_prev.array()).sum() +
                 (dx_post.array() * rec.x_post_prev.array()).sum();
      ds[p - 1] += cfg_.trace_increment * dx_pre;
      ds[p] += cfg_.trace_increment * dx_post;
      dx_pre *= alpha;
      dx_post *= alpha;
    }

    for (int k = n_layers - 1; k >= 0; --k) {
      Mat dv_t = dv[k];
      if (k < static_cast<int>(g.v.size()) && g.v[k].size() > 0) dv_t += g.v[k];
      Mat dv_pre = dv_t;
      if (!cfg_.exact_gradient) {
        const Mat& vp = rec.v_pre[k];
        for (Eigen::Index c = 0; c < vp.cols(); ++c) {
          for (Eigen::Index r = 0; r < vp.rows(); ++r) {
            const double sg = snn::surrogate_grad(vp(r, c), cfg_.lif);
            if (sg != 0.0) dv_pre(r, c) += (ds[k](r, c) - theta * dv_t(r, c)) * sg;
          }
        }
      }
      dv[k] = lambda * dv_pre;
      const Mat& x = k == 0 ? rec.input : rec.spikes[k - 1];
      d_w[k].noalias() += dv_pre * x.transpose();
      d_b[k].col(0) += dv_pre.rowwise().sum();
      const Mat& w = params[weight_name(k)];
      if (k > 0) {
        if (cfg_.plastic() && k == p) {
          for (int b = 0; b < batch; ++b) {
            d_off[b].noalias() += dv_pre.col(b) * x.col(b).transpose();
            ds[k - 1].col(b).noalias() +=
                (w + rec.offset[b]).transpose() * dv_pre.col(b);
          }
        } else {
          ds[k - 1].noalias() += w.transpose() * dv_pre;
        }
      } else if (cfg_.context_dim > 0) {
        out.context[t] = (w.transpose() * dv_pre).bottomRows(cfg_.context_dim);
      }
    }

    // A reset before step t makes the previous state a constant.
    for (int b = 0; b < static_cast<int>(rec.in.reset.size()); ++b) {
      if (!rec.in.reset[b]) continue;
      for (auto& m : dv) m.col(b).setZero();
      dr.col(b).setZero();
      if (cfg_.plastic()) {
        dx_pre.col(b).setZero();
        dx_post.col(b).setZero();
        d_off[b].setZero();
        if (modulated) {
          de_plus[b].setZero();
          de_minus[b].setZero();
        }
      }
    }
  }

  for (int k = 0; k < n_layers; ++k) {
    grads[weight_name(k)] += d_w[k];
    grads[bias_name(k)] += d_b[k];
  }
  grads[kReadoutW] += d_wo;
  grads[kReadoutB] += d_bo;
  if (cfg_.plastic()) {
    grads[kAPlus] += d_aplus;
    grads[kAMinus] += d_aminus;
    grads[kTraceDecay](0, 0) += d_alpha;
    if (modulated) {
      grads[kRate] += d_rate;
      grads[kEligDecay](0, 0) += d_gamma;
    }
  }
  return out;
}

}  // namespace sma::meta
