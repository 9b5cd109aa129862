#include "diffrl/policy_value.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace diffrl {

Vector net_input(double tau, const Vector& y, const std::optional<Vector>& c) {
  Vector in(1 + y.size() + (c ? c->size() : 0));
  in[0] = tau;
  in.segment(1, y.size()) = y;
  if (c) in.tail(c->size()) = *c;
  return in;
}

double policy_stddev(const GaussianPolicy& pol, double t_rev) {
  if (!(t_rev >= 0.0 && t_rev < pol.sched.horizon))
    throw std::domain_error("policy: reverse time must lie in [0, horizon)");
  if (!(pol.theta > 0.0)) throw std::invalid_argument("policy: theta must be > 0");
  const double g = pol.sched.g(pol.sched.horizon - t_rev);
  return std::sqrt(pol.theta / (2.0 * g * g));
}

Vector policy_mean(const GaussianPolicy& pol, double t_rev, const Vector& y,
                   const std::optional<Vector>& c) {
  const Vector in = net_input(pol.sched.horizon - t_rev, y, c);
  Vector mu = mlp_forward(pol.mean_spec, pol.psi, in);
  if (!mu.allFinite())
    throw EpisodeAbort("policy: mean network produced a non-finite value");
  return mu;
}

Vector policy_sample(const GaussianPolicy& pol, double t_rev, const Vector& y,
                     RngStream& rng, const std::optional<Vector>& c) {
  const double sd = policy_stddev(pol, t_rev);
  const Vector mu = policy_mean(pol, t_rev, y, c);
  return mu + sd * rng.normal_vector(static_cast<int>(mu.size()));
}

double q_value(const GaussianPolicy& pol, double t_rev, const Vector& y,
               const Vector& a, const std::optional<Vector>& c) {
  if (!(t_rev >= 0.0 && t_rev < pol.sched.horizon))
    throw std::domain_error("policy: reverse time must lie in [0, horizon)");
  const double g = pol.sched.g(pol.sched.horizon - t_rev);
  const double g2 = g * g;
  const Vector mu = policy_mean(pol, t_rev, y, c);
  const double d = static_cast<double>(a.size());
  return -g2 * (a - mu).squaredNorm() -
         0.5 * pol.theta * d * std::log(std::numbers::pi * pol.theta / g2);
}

double policy_logdensity(const GaussianPolicy& pol, double t_rev,
                         const Vector& y, const Vector& a,
                         const std::optional<Vector>& c) {
  return q_value(pol, t_rev, y, a, c) / pol.theta;
}

Vector q_grad_psi(const GaussianPolicy& pol, double t_rev, const Vector& y,
                  const Vector& a, const std::optional<Vector>& c) {
  if (!(t_rev >= 0.0 && t_rev < pol.sched.horizon))
    throw std::domain_error("policy: reverse time must lie in [0, horizon)");
  const double g = pol.sched.g(pol.sched.horizon - t_rev);
  const Vector in = net_input(pol.sched.horizon - t_rev, y, c);
  ForwardTape tape;
  const Vector mu = mlp_forward(pol.mean_spec, pol.psi, in, &tape);
  const Matrix cot = 2.0 * g * g * (a - mu);
  return mlp_backward(pol.mean_spec, pol.psi, tape, cot).param_grad;
}

ValueAndGrad value_and_grad(const ValueFunction& vf, double tau,
                            const Vector& y, const std::optional<Vector>& c) {
  if (vf.spec.output_dim() != 1)
    throw std::invalid_argument("value: network must have scalar output");
  const Vector in = net_input(tau, y, c);
  ForwardTape tape;
  const Vector out = mlp_forward(vf.spec, vf.params, in, &tape);
  ValueAndGrad vg;
  vg.value = out[0];
  vg.grad = mlp_backward(vf.spec, vf.params, tape, Matrix::Ones(1, 1)).param_grad;
  return vg;
}

}  // namespace diffrl
