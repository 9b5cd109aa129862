#pragma once

#include <functional>

#include "diffrl/dataset.hpp"
#include "diffrl/rng.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// k-nearest-neighbor KL divergence estimate between sample sets (columns are
// points):
//   (d/n) sum_i log(nu_k(i) / rho_k(i)) + log(n' / (n - 1)),
// with rho_k the k-NN distance within samples_p (self excluded) and nu_k the
// k-NN distance into samples_q.  Exact duplicates inside samples_p get a
// deterministic jitter of 1e-12 * data scale; zero cross-set distances are
// floored by the same amount.  Degenerate points are counted in the report.
struct KnnKlResult {
  double value = 0.0;
  int degenerate = 0;
};

KnnKlResult knn_kl(const Matrix& samples_p, const Matrix& samples_q, int k = 1);

struct MetricReport {
  double mean = 0.0;
  double stderr_mean = 0.0;  // sample std / sqrt(batches)
  double ci95_halfwidth = 0.0;
  int batches = 0;
};

// Repeated-batch protocol: n_batches independent sample sets from the
// generator, each scored by knn_kl against the reference and by the mean
// terminal reward.  Batch b draws from rng.derive("eval").derive(b).
using SampleGenerator = std::function<Matrix(int count, RngStream& rng)>;

struct BatchProtocolResult {
  MetricReport kl;
  MetricReport reward;
};

BatchProtocolResult batch_protocol(const SampleGenerator& generator,
                                   const Matrix& reference,
                                   const RewardSpec& reward, int n_batches,
                                   int batch_size, int k, const RngStream& rng);

}  // namespace diffrl
