#include "diffrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace diffrl {

namespace {

// k-th smallest entry (1-based) of a scratch vector.
double kth_smallest(std::vector<double>& buf, int k) {
  std::nth_element(buf.begin(), buf.begin() + (k - 1), buf.end());
  return buf[k - 1];
}

}  // namespace

KnnKlResult knn_kl(const Matrix& samples_p, const Matrix& samples_q, int k) {
  const int n = static_cast<int>(samples_p.cols());
  const int nq = static_cast<int>(samples_q.cols());
  const int d = static_cast<int>(samples_p.rows());
  if (d == 0 || samples_q.rows() != d)
    throw std::invalid_argument("knn_kl: dimension mismatch");
  if (k < 1 || k > n - 1 || k > nq)
    throw std::invalid_argument("knn_kl: need 1 <= k <= min(n - 1, n')");

  double scale = std::max(samples_p.cwiseAbs().maxCoeff(),
                          samples_q.cwiseAbs().maxCoeff());
  if (!(scale > 0.0)) scale = 1.0;
  const double jit = 1e-12 * scale;
  const double floor_sq = jit * jit;

  KnnKlResult res;

  // Deterministic jitter for exact duplicates within the query set: the c-th
  // repeat of a value is shifted by c * jit along coordinate (c-1) mod d.
  Matrix p = samples_p;
  for (int i = 0; i < n; ++i) {
    int repeats = 0;
    for (int j = 0; j < i; ++j) {
      if (samples_p.col(j) == samples_p.col(i)) ++repeats;
    }
    if (repeats > 0) {
      p((repeats - 1) % d, i) += repeats * jit;
      ++res.degenerate;
    }
  }

  std::vector<double> dp(n - 1), dq(nq);
  double log_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    int w = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      dp[w++] = (p.col(j) - p.col(i)).squaredNorm();
    }
    for (int j = 0; j < nq; ++j)
      dq[j] = (samples_q.col(j) - p.col(i)).squaredNorm();
    double rho = kth_smallest(dp, k);
    double nu = kth_smallest(dq, k);
    if (rho < floor_sq) {
      rho = floor_sq;
      ++res.degenerate;
    }
    if (nu < floor_sq) {
      nu = floor_sq;
      ++res.degenerate;
    }
    log_sum += 0.5 * std::log(nu / rho);
  }
  res.value = (static_cast<double>(d) / n) * log_sum +
              std::log(static_cast<double>(nq) / (n - 1));
  return res;
}

BatchProtocolResult batch_protocol(const SampleGenerator& generator,
                                   const Matrix& reference,
                                   const RewardSpec& reward, int n_batches,
                                   int batch_size, int k, const RngStream& rng) {
  if (n_batches <= 0 || batch_size <= 0)
    throw std::invalid_argument("batch_protocol: counts must be positive");
  Vector kls(n_batches), rewards(n_batches);
  RngStream eval_root = rng.derive("eval");
  for (int b = 0; b < n_batches; ++b) {
    RngStream stream = eval_root.derive(static_cast<std::uint64_t>(b));
    const Matrix samples = generator(batch_size, stream);
    if (samples.cols() != batch_size || samples.rows() != reference.rows())
      throw std::runtime_error("batch_protocol: generator returned a bad shape");
    kls[b] = knn_kl(samples, reference, k).value;
    double r = 0.0;
    for (int j = 0; j < batch_size; ++j)
      r += reward_eval(reward, samples.col(j));
    rewards[b] = r / batch_size;
  }

  auto report = [n_batches](const Vector& v) {
    MetricReport r;
    r.batches = n_batches;
    r.mean = v.mean();
    if (n_batches > 1) {
      const double var = (v.array() - r.mean).square().sum() / (n_batches - 1);
      r.stderr_mean = std::sqrt(var / n_batches);
      r.ci95_halfwidth = 1.96 * r.stderr_mean;
    }
    return r;
  };
  return BatchProtocolResult{report(kls), report(rewards)};
}

}  // namespace diffrl
