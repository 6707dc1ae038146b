#pragma once

#include <cmath>
#include <random>

#include "sma/common.hpp"

// Synaptic traces, pair-based STDP, dual eligibility traces and the
// neuromodulated weight update of the plastic layer.
//
// Matrices are indexed [post, pre]. Value-returning functions are thin
// wrappers over the in-place kernels, which the policy network calls
// directly so both paths share arithmetic.
namespace sma::plasticity {

struct TraceState {
  Vec pre;   // one trace per pre-synaptic neuron
  Vec post;  // one trace per post-synaptic neuron
  double decay = std::exp(-1.0 / 10.0);
  double increment = 1.0;

  static TraceState zeros(int n_pre, int n_post);
};

struct StdpCoefficients {
  Mat a_plus;
  Mat a_minus;

  // Hebbian start: both coefficients drawn from U(lo, hi) with lo > 0.
  static StdpCoefficients hebbian(int n_post, int n_pre, std::mt19937_64& rng,
                                  double lo = 0.5, double hi = 1.0);
};

struct EligibilityPair {
  Mat plus;
  Mat minus;
  double retention = std::exp(-1.0 / 200.0);
  Mat rate;  // per-synapse accumulation rate

  // Zero traces, rate ~ U(0,1) * rate_scale.
  static EligibilityPair init(int n_post, int n_pre, std::mt19937_64& rng,
                              double rate_scale = 1e-3);
};

// m_plus is per post-neuron by default; kPlusPerPre broadcasts it along the
// pre-synaptic index instead. m_minus is always per post-neuron.
enum class ModulatorLayout { kPerPost, kPlusPerPre };

struct ModulatorSignal {
  Vec plus;
  Vec minus;
};

struct PlasticWeights {
  Mat w;
  double update_scale = 1e-3;
  long step = 1;  // policy steps since episode start, >= 1
};

// x' = decay * x + increment * s for both sides.
TraceState update_trace(const TraceState& trace, const Vec& spikes_pre,
                        const Vec& spikes_post);

// A+ * x_pre * s_post - A- * x_post * s_pre, elementwise over synapses.
Mat stdp_delta(const StdpCoefficients& coef, const TraceState& trace,
               const Vec& spikes_pre, const Vec& spikes_post);

// E+' = r E+ + rate * A+ * (s_post x_pre^T); E-' = r E- - rate * A- * (x_post s_pre^T).
EligibilityPair update_eligibility(const EligibilityPair& elig,
                                   const StdpCoefficients& coef,
                                   const TraceState& trace,
                                   const Vec& spikes_pre,
                                   const Vec& spikes_post);

// exp(1/t) - 1 for t >= 1.
double stabilization(long t);

// m+ * E+ + m- * E- with the modulators broadcast per `layout`.
Mat modulated_delta(const EligibilityPair& elig, const ModulatorSignal& mod,
                    ModulatorLayout layout = ModulatorLayout::kPerPost);

// W' = W + stabilization(t) * update_scale * modulated_delta; t' = t + 1.
PlasticWeights modulated_update(const PlasticWeights& w,
                                const EligibilityPair& elig,
                                const ModulatorSignal& mod,
                                ModulatorLayout layout = ModulatorLayout::kPerPost);

// Plain additive STDP: W' = W + update_scale * stdp_delta; t' = t + 1.
PlasticWeights unmodulated_stdp_update(const PlasticWeights& w,
                                       const StdpCoefficients& coef,
                                       const TraceState& trace,
                                       const Vec& spikes_pre,
                                       const Vec& spikes_post);

// ---- in-place kernels -------------------------------------------------------

void advance_trace(Eigen::Ref<Vec> x, const Vec& spikes, double decay,
                   double increment);

void advance_eligibility(Mat& e_plus, Mat& e_minus, double retention,
                         const Mat& rate, const Mat& a_plus, const Mat& a_minus,
                         const Vec& x_pre, const Vec& x_post,
                         const Vec& spikes_pre, const Vec& spikes_post);

// w += gain * (m+ * E+ + m- * E-).
void apply_modulated(Mat& w, const Mat& e_plus, const Mat& e_minus,
                     const Vec& m_plus, const Vec& m_minus,
                     ModulatorLayout layout, double gain);

// w += gain * stdp_delta.
void apply_stdp(Mat& w, const Mat& a_plus, const Mat& a_minus, const Vec& x_pre,
                const Vec& x_post, const Vec& spikes_pre, const Vec& spikes_post,
                double gain);

}  // namespace sma::plasticity
