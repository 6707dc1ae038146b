#include "sma/plasticity/plasticity.hpp"

#include <string>

namespace sma::plasticity {
namespace {

void check_pair(const Mat& m, Eigen::Index n_post, Eigen::Index n_pre,
                const char* what) {
  require(m.rows() == n_post && m.cols() == n_pre,
          std::string(what) + " is " + shape_str(m) + ", expected " +
              std::to_string(n_post) + "x" + std::to_string(n_pre));
}

void check_spikes(const TraceState& trace, const Vec& s_pre, const Vec& s_post) {
  require(s_pre.size() == trace.pre.size(),
          "pre spikes length " + std::to_string(s_pre.size()) +
              " != pre trace length " + std::to_string(trace.pre.size()));
  require(s_post.size() == trace.post.size(),
          "post spikes length " + std::to_string(s_post.size()) +
              " != post trace length " + std::to_string(trace.post.size()));
}

}  // namespace

TraceState TraceState::zeros(int n_pre, int n_post) {
  TraceState t;
  t.pre = Vec::Zero(n_pre);
  t.post = Vec::Zero(n_post);
  return t;
}

StdpCoefficients StdpCoefficients::hebbian(int n_post, int n_pre,
                                           std::mt19937_64& rng, double lo,
                                           double hi) {
  require(lo > 0.0 && hi >= lo, "hebbian: need 0 < lo <= hi");
  std::uniform_real_distribution<double> u(lo, hi);
  StdpCoefficients c;
  c.a_plus.resize(n_post, n_pre);
  c.a_minus.resize(n_post, n_pre);
  for (Eigen::Index j = 0; j < n_pre; ++j) {
    for (Eigen::Index i = 0; i < n_post; ++i) c.a_plus(i, j) = u(rng);
  }
  for (Eigen::Index j = 0; j < n_pre; ++j) {
    for (Eigen::Index i = 0; i < n_post; ++i) c.a_minus(i, j) = u(rng);
  }
  return c;
}

EligibilityPair EligibilityPair::init(int n_post, int n_pre,
                                      std::mt19937_64& rng, double rate_scale) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EligibilityPair e;
  e.plus = Mat::Zero(n_post, n_pre);
  e.minus = Mat::Zero(n_post, n_pre);
  e.rate.resize(n_post, n_pre);
  for (Eigen::Index j = 0; j < n_pre; ++j) {
    for (Eigen::Index i = 0; i < n_post; ++i) e.rate(i, j) = u(rng) * rate_scale;
  }
  return e;
}

void advance_trace(Eigen::Ref<Vec> x, const Vec& spikes, double decay,
                   double increment) {
  require(x.size() == spikes.size(), "advance_trace: length mismatch");
  x = decay * x + increment * spikes;
}

TraceState update_trace(const TraceState& trace, const Vec& spikes_pre,
                        const Vec& spikes_post) {
  check_spikes(trace, spikes_pre, spikes_post);
  TraceState next = trace;
  advance_trace(next.pre, spikes_pre, trace.decay, trace.increment);
  advance_trace(next.post, spikes_post, trace.decay, trace.increment);
  return next;
}

Mat stdp_delta(const StdpCoefficients& coef, const TraceState& trace,
               const Vec& spikes_pre, const Vec& spikes_post) {
  check_spikes(trace, spikes_pre, spikes_post);
  const auto n_post = trace.post.size();
  const auto n_pre = trace.pre.size();
  check_pair(coef.a_plus, n_post, n_pre, "A+");
  check_pair(coef.a_minus, n_post, n_pre, "A-");
  Mat delta = Mat::Zero(n_post, n_pre);
  apply_stdp(delta, coef.a_plus, coef.a_minus, trace.pre, trace.post,
             spikes_pre, spikes_post, 1.0);
  return delta;
}

void advance_eligibility(Mat& e_plus, Mat& e_minus, double retention,
                         const Mat& rate, const Mat& a_plus, const Mat& a_minus,
                         const Vec& x_pre, const Vec& x_post,
                         const Vec& spikes_pre, const Vec& spikes_post) {
  e_plus *= retention;
  e_minus *= retention;
  // LTP: post spike pairs with the pre trace; LTD: pre spike with post trace.
  e_plus.array() += rate.array() * a_plus.array() *
                    (spikes_post * x_pre.transpose()).array();
  e_minus.array() -= rate.array() * a_minus.array() *
                     (x_post * spikes_pre.transpose()).array();
}

EligibilityPair update_eligibility(const EligibilityPair& elig,
                                   const StdpCoefficients& coef,
                                   const TraceState& trace,
                                   const Vec& spikes_pre,
                                   const Vec& spikes_post) {
  check_spikes(trace, spikes_pre, spikes_post);
  const auto n_post = trace.post.size();
  const auto n_pre = trace.pre.size();
  check_pair(elig.plus, n_post, n_pre, "E+");
  check_pair(elig.minus, n_post, n_pre, "E-");
  check_pair(elig.rate, n_post, n_pre, "eligibility rate");
  check_pair(coef.a_plus, n_post, n_pre, "A+");
  check_pair(coef.a_minus, n_post, n_pre, "A-");
  EligibilityPair next = elig;
  advance_eligibility(next.plus, next.minus, elig.retention, elig.rate,
                      coef.a_plus, coef.a_minus, trace.pre, trace.post,
                      spikes_pre, spikes_post);
  return next;
}

double stabilization(long t) {
  require(t >= 1, "stabilization: step index must be >= 1, got " +
                      std::to_string(t));
  return std::expm1(1.0 / static_cast<double>(t));
}

void apply_modulated(Mat& w, const Mat& e_plus, const Mat& e_minus,
                     const Vec& m_plus, const Vec& m_minus,
                     ModulatorLayout layout, double gain) {
  if (layout == ModulatorLayout::kPerPost) {
    w.noalias() += gain * (m_plus.asDiagonal() * e_plus +
                           m_minus.asDiagonal() * e_minus);
  } else {
    w.noalias() += gain * (e_plus * m_plus.asDiagonal() +
                           m_minus.asDiagonal() * e_minus);
  }
}

void apply_stdp(Mat& w, const Mat& a_plus, const Mat& a_minus, const Vec& x_pre,
                const Vec& x_post, const Vec& spikes_pre, const Vec& spikes_post,
                double gain) {
  w.array() += gain * (a_plus.array() * (spikes_post * x_pre.transpose()).array() -
                       a_minus.array() * (x_post * spikes_pre.transpose()).array());
}

Mat modulated_delta(const EligibilityPair& elig, const ModulatorSignal& mod,
                    ModulatorLayout layout) {
  const auto n_post = elig.plus.rows();
  const auto n_pre = elig.plus.cols();
  check_pair(elig.minus, n_post, n_pre, "E-");
  const auto plus_len = layout == ModulatorLayout::kPerPost ? n_post : n_pre;
  require(mod.plus.size() == plus_len,
          "m+ has length " + std::to_string(mod.plus.size()) + ", expected " +
              std::to_string(plus_len));
  require(mod.minus.size() == n_post,
          "m- has length " + std::to_string(mod.minus.size()) + ", expected " +
              std::to_string(n_post));
  if (!mod.plus.allFinite() || !mod.minus.allFinite()) {
    throw NumericError("modulated_update: non-finite modulator");
  }
  Mat delta = Mat::Zero(n_post, n_pre);
  apply_modulated(delta, elig.plus, elig.minus, mod.plus, mod.minus, layout, 1.0);
  return delta;
}

PlasticWeights modulated_update(const PlasticWeights& w,
                                const EligibilityPair& elig,
                                const ModulatorSignal& mod,
                                ModulatorLayout layout) {
  check_pair(elig.plus, w.w.rows(), w.w.cols(), "E+");
  const Mat delta = modulated_delta(elig, mod, layout);
  PlasticWeights next = w;
  next.w += (stabilization(w.step) * w.update_scale) * delta;
  next.step = w.step + 1;
  return next;
}

PlasticWeights unmodulated_stdp_update(const PlasticWeights& w,
                                       const StdpCoefficients& coef,
                                       const TraceState& trace,
                                       const Vec& spikes_pre,
                                       const Vec& spikes_post) {
  const Mat delta = stdp_delta(coef, trace, spikes_pre, spikes_post);
  check_pair(delta, w.w.rows(), w.w.cols(), "STDP delta");
  PlasticWeights next = w;
  next.w += w.update_scale * delta;
  next.step = w.step + 1;
  return next;
}

}  // namespace sma::plasticity
