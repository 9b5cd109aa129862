#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffrl/rng.hpp"
#include "diffrl/schedule.hpp"
#include "diffrl/types.hpp"

namespace diffrl {

// Finite sample set, points stored as columns (d x M).  Optional per-point
// conditions (cond_dim x M) for conditional training.
struct Dataset {
  Matrix points;
  std::optional<Matrix> conditions;

  int dim() const { return static_cast<int>(points.rows()); }
  int size() const { return static_cast<int>(points.cols()); }
  int cond_dim() const {
    return conditions ? static_cast<int>(conditions->rows()) : 0;
  }
};

// Optionally reports which component generated each point.
Dataset gen_gaussian_mixture(const GaussianMixture& mix, int n, RngStream& rng,
                             std::vector<int>* components = nullptr);

// Planar spiral t (cos t, sin t), t uniform on [1.5 pi, 4.5 pi], plus
// isotropic N(0, noise^2) jitter.  Raw coordinates, no rescale.
Dataset gen_swiss_roll(int n, double noise, RngStream& rng);

// Uniform subsample of point indices without replacement; m <= dataset size.
std::vector<int> subsample_indices(int size, int m, RngStream& rng);

// Terminal reward h(y), weighted by beta in the training objective.
enum class RewardKind {
  Quadratic,       // -|y - center|^2
  IndicatorBand,   // 1 if lo <= y[axis] <= hi else 0
  External,        // user-supplied callable
};

struct RewardSpec {
  RewardKind kind = RewardKind::Quadratic;
  double beta = 0.0;  // weight of h in the objective
  Vector center;                      // Quadratic
  int axis = 0;                       // IndicatorBand
  double lo = 0.0, hi = 0.0;          // IndicatorBand
  std::function<double(const Vector&)> external;  // External

  static RewardSpec quadratic(Vector center, double beta);
  static RewardSpec indicator_band(int axis, double lo, double hi, double beta);
  static RewardSpec external_fn(std::function<double(const Vector&)> fn,
                                double beta);
};

// Evaluates h(y).  Throws std::runtime_error if an External callable fails
// or returns a non-finite value.
double reward_eval(const RewardSpec& reward, const Vector& y);

// CSV I/O.  Datasets use header x0,..,x{d-1}[,c0,..]; sample sets use
// y0,..,y{d-1}.  Values round-trip at 17 significant digits.  Lines starting
// with '#' are metadata comments and are skipped on read.
void save_dataset_csv(const std::string& path, const Dataset& ds,
                      const std::string& meta_comment = "");
Dataset load_dataset_csv(const std::string& path);
void save_samples_csv(const std::string& path, const Matrix& samples,
                      const std::string& meta_comment = "");
Matrix load_samples_csv(const std::string& path);

}  // namespace diffrl
