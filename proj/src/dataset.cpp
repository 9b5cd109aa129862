#include "diffrl/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace diffrl {

Dataset gen_gaussian_mixture(const GaussianMixture& mix, int n, RngStream& rng,
                             std::vector<int>* components) {
  if (n <= 0) throw std::invalid_argument("gen_gaussian_mixture: n must be > 0");
  if (mix.components() == 0)
    throw std::invalid_argument("gen_gaussian_mixture: empty mixture");
  const int d = mix.dim();
  Matrix pts(d, n);
  if (components) components->assign(n, 0);
  // Component choice by inverse CDF on one uniform per point.
  for (int j = 0; j < n; ++j) {
    const double u = rng.uniform();
    double acc = 0.0;
    int k = mix.components() - 1;
    for (int i = 0; i < mix.components(); ++i) {
      acc += mix.weights[i];
      if (u < acc) {
        k = i;
        break;
      }
    }
    pts.col(j) = mix.means[k] + std::sqrt(mix.variances[k]) * rng.normal_vector(d);
    if (components) (*components)[j] = k;
  }
  return Dataset{std::move(pts), std::nullopt};
}

Dataset gen_swiss_roll(int n, double noise, RngStream& rng) {
  if (n <= 0) throw std::invalid_argument("gen_swiss_roll: n must be > 0");
  if (noise < 0.0) throw std::invalid_argument("gen_swiss_roll: noise must be >= 0");
  Matrix pts(2, n);
  const double lo = 1.5 * std::numbers::pi;
  const double hi = 4.5 * std::numbers::pi;
  for (int j = 0; j < n; ++j) {
    const double t = lo + (hi - lo) * rng.uniform();
    pts(0, j) = t * std::cos(t);
    pts(1, j) = t * std::sin(t);
    if (noise > 0.0) pts.col(j) += noise * rng.normal_vector(2);
  }
  return Dataset{std::move(pts), std::nullopt};
}

std::vector<int> subsample_indices(int size, int m, RngStream& rng) {
  if (m <= 0 || m > size)
    throw std::invalid_argument("subsample_indices: need 0 < m <= size");
  // m == size: all indices, no stream consumption (order never matters to
  // callers, which reduce over the subsample symmetrically).
  std::vector<int> idx(size);
  for (int i = 0; i < size; ++i) idx[i] = i;
  if (m == size) return idx;
  // Partial Fisher-Yates: first m entries are the sample.
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(size - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

RewardSpec RewardSpec::quadratic(Vector center, double beta) {
  if (beta < 0.0) throw std::invalid_argument("reward: beta must be >= 0");
  RewardSpec r;
  r.kind = RewardKind::Quadratic;
  r.beta = beta;
  r.center = std::move(center);
  return r;
}

RewardSpec RewardSpec::indicator_band(int axis, double lo, double hi,
                                      double beta) {
  if (beta < 0.0) throw std::invalid_argument("reward: beta must be >= 0");
  if (!(lo <= hi)) throw std::invalid_argument("reward: need lo <= hi");
  if (axis < 0) throw std::invalid_argument("reward: axis must be >= 0");
  RewardSpec r;
  r.kind = RewardKind::IndicatorBand;
  r.beta = beta;
  r.axis = axis;
  r.lo = lo;
  r.hi = hi;
  return r;
}

RewardSpec RewardSpec::external_fn(std::function<double(const Vector&)> fn,
                                   double beta) {
  if (beta < 0.0) throw std::invalid_argument("reward: beta must be >= 0");
  if (!fn) throw std::invalid_argument("reward: external callable is empty");
  RewardSpec r;
  r.kind = RewardKind::External;
  r.beta = beta;
  r.external = std::move(fn);
  return r;
}

double reward_eval(const RewardSpec& reward, const Vector& y) {
  switch (reward.kind) {
    case RewardKind::Quadratic: {
      if (reward.center.size() != y.size())
        throw std::invalid_argument("reward: center dimension mismatch");
      return -(y - reward.center).squaredNorm();
    }
    case RewardKind::IndicatorBand: {
      if (reward.axis >= y.size())
        throw std::invalid_argument("reward: axis out of range");
      const double v = y[reward.axis];
      return (v >= reward.lo && v <= reward.hi) ? 1.0 : 0.0;
    }
    case RewardKind::External: {
      double v;
      try {
        v = reward.external(y);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string("reward: external callable failed: ") +
                                 e.what());
      }
      if (!std::isfinite(v))
        throw std::runtime_error("reward: external callable returned non-finite value");
      return v;
    }
  }
  throw std::logic_error("reward: unknown kind");
}

namespace {

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads a CSV of doubles, skipping '#' comment lines; returns rows and the
// header fields.
std::pair<std::vector<std::vector<double>>, std::vector<std::string>>
read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string field;
    if (!have_header) {
      while (std::getline(ss, field, ',')) header.push_back(field);
      have_header = true;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw std::runtime_error("csv: bad numeric field '" + field + "' in " + path);
      }
    }
    if (row.size() != header.size())
      throw std::runtime_error("csv: ragged row in " + path);
    rows.push_back(std::move(row));
  }
  if (!have_header) throw std::runtime_error("csv: missing header in " + path);
  return {std::move(rows), std::move(header)};
}

void write_table(const std::string& path, const Matrix& cols_are_points,
                 const std::optional<Matrix>& conds, const char* prefix,
                 const std::string& meta_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
  const int d = static_cast<int>(cols_are_points.rows());
  const int dc = conds ? static_cast<int>(conds->rows()) : 0;
  for (int i = 0; i < d; ++i) out << (i ? "," : "") << prefix << i;
  for (int i = 0; i < dc; ++i) out << ",c" << i;
  out << "\n";
  for (int j = 0; j < cols_are_points.cols(); ++j) {
    for (int i = 0; i < d; ++i)
      out << (i ? "," : "") << format_value(cols_are_points(i, j));
    for (int i = 0; i < dc; ++i) out << "," << format_value((*conds)(i, j));
    out << "\n";
  }
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

}  // namespace

void save_dataset_csv(const std::string& path, const Dataset& ds,
                      const std::string& meta_comment) {
  write_table(path, ds.points, ds.conditions, "x", meta_comment);
}

Dataset load_dataset_csv(const std::string& path) {
  auto [rows, header] = read_csv(path);
  int d = 0, dc = 0;
  for (const auto& h : header) {
    if (h == "x" + std::to_string(d)) {
      ++d;
    } else if (h == "c" + std::to_string(dc)) {
      ++dc;
    } else {
      throw std::runtime_error("csv: unexpected dataset header field '" + h +
                               "' in " + path);
    }
  }
  if (d == 0) throw std::runtime_error("csv: no x columns in " + path);
  if (rows.empty()) throw std::runtime_error("csv: empty dataset in " + path);
  Dataset ds;
  ds.points.resize(d, static_cast<int>(rows.size()));
  if (dc > 0) ds.conditions = Matrix(dc, static_cast<int>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j) {
    for (int i = 0; i < d; ++i) ds.points(i, static_cast<int>(j)) = rows[j][i];
    for (int i = 0; i < dc; ++i)
      (*ds.conditions)(i, static_cast<int>(j)) = rows[j][d + i];
  }
  return ds;
}

void save_samples_csv(const std::string& path, const Matrix& samples,
                      const std::string& meta_comment) {
  write_table(path, samples, std::nullopt, "y", meta_comment);
}

Matrix load_samples_csv(const std::string& path) {
  auto [rows, header] = read_csv(path);
  const int d = static_cast<int>(header.size());
  for (int i = 0; i < d; ++i)
    if (header[i] != "y" + std::to_string(i))
      throw std::runtime_error("csv: unexpected samples header in " + path);
  if (rows.empty()) throw std::runtime_error("csv: empty sample set in " + path);
  Matrix m(d, static_cast<int>(rows.size()));
  for (size_t j = 0; j < rows.size(); ++j)
    for (int i = 0; i < d; ++i) m(i, static_cast<int>(j)) = rows[j][i];
  return m;
}

}  // namespace diffrl
