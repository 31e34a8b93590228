/**
 * Flow integration: deterministic Heun ODE sampling, Euler-Maruyama SDE
 * sampling with score annealing (eta) and noise scaling (gamma), the
 * flow-to-score conversion, time-annealed conditional/unconditional mixing,
 * and structure decoding from token prefixes.
 */
#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "chaintok/fsq.hpp"
#include "chaintok/geometry.hpp"
#include "chaintok/model.hpp"
#include "chaintok/rng.hpp"

namespace chaintok::sampler {

enum class Mode { Ode, Sde };
enum class GSchedule { OneMinusT, Constant };

constexpr double kAlphaUnconditional = std::numeric_limits<double>::infinity();

struct SamplerConfig {
    int steps = 40;
    Mode mode = Mode::Ode;
    double eta = 0.3;    // score-annealing strength (SDE drift)
    double gamma = 1.0;  // noise scale (SDE diffusion)
    /// Classifier annealing is a generation-time knob: off, decoding is pure
    /// conditional (reconstruction); on, the velocity mixes conditional and
    /// unconditional branches with weight 1 - t^alpha.
    bool annealing = false;
    double alpha = 1.0;  // kAlphaUnconditional disables conditioning entirely
    GSchedule g_schedule = GSchedule::OneMinusT;
    uint64_t seed = 0;
    /// Terminal guard: the 1/(1-t) score singularity forbids score/noise
    /// injection past t > 1 - delta; the tail integrates as an ODE.
    double delta = 1e-3;
};

/// Velocity field over a flattened state (doubles at the interface; model
/// fields compute in float32 internally).
using VelocityField =
    std::function<std::vector<double>(const std::vector<double>& x, double t)>;

/// Appendix-style score from the flow: s = (t v - x_t) / (1 - t).
/// Requires t < 1 - delta.
std::vector<double> flow_to_score(const std::vector<double>& v,
                                  const std::vector<double>& x_t, double t,
                                  double delta = 1e-3);
/// Tensor variant (float32 storage, double internal accumulation).
Tensor flow_to_score(const Tensor& v, const Tensor& x_t, double t, double delta = 1e-3);

/// Heun (2nd order) integration of dx = v dt over a uniform grid t: 0 -> 1,
/// starting from i.i.d. standard normal state of dimension `dim`.
/// Deterministic given config.seed.
std::vector<double> integrate_ode(const VelocityField& v_fn, int dim,
                                  const SamplerConfig& cfg);

/// Euler-Maruyama integration of
///   dx = v dt + g(t) eta s dt + sqrt(2 g(t) gamma) dW,
/// score from flow_to_score; noise and score injection stop at t > 1-delta
/// and the final segment integrates as an ODE. The degenerate eta=gamma=0
/// case delegates to the Heun ODE path so both integrators agree exactly.
std::vector<double> integrate_sde(const VelocityField& v_fn, int dim,
                                  const SamplerConfig& cfg);

/// Eq.-style time-annealed interpolation:
///   v = v_unc + (1 - t^alpha) (v_cond - v_unc).
/// Fully conditional at t=0, fully unconditional at t=1 (alpha > 0);
/// alpha = infinity is the no-conditioning sentinel.
std::vector<double> annealed_velocity(const std::vector<double>& v_cond,
                                      const std::vector<double>& v_unc, double t,
                                      double alpha);

/// Velocity field of a trained tokenizer conditioned on a token prefix.
/// With annealing off the field is the conditional branch alone; on, the
/// conditional and unconditional branches mix per Eq.-style weighting.
VelocityField model_velocity_field(const model::TokenizerModel& m,
                                   const fsq::TokenSequence& tokens, bool annealing,
                                   double alpha);

enum class SizeSource { Predicted, Forced };

/// Decode a structure from a token prefix. Size comes from the model's size
/// head or is forced (shrinking); forced sizes above 256 throw. Deterministic
/// given config.seed. Output is centered.
geometry::CoordSet decode_structure(const model::TokenizerModel& m,
                                    const fsq::TokenSequence& tokens,
                                    SizeSource size_source, int forced_size,
                                    const SamplerConfig& cfg);

}  // namespace chaintok::sampler
