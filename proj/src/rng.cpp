#include "diffrl/rng.hpp"

#include <cmath>
#include <numbers>

namespace diffrl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_key(std::uint64_t key, std::uint64_t tag) {
  return splitmix64(key ^ splitmix64(tag + 0x9e3779b97f4a7c15ULL));
}

std::uint64_t hash_label(std::string_view label) {
  // FNV-1a, then one splitmix round to spread low-entropy labels.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

RngStream RngStream::derive(std::uint64_t tag) const {
  return RngStream(mix_key(key_, tag));
}

RngStream RngStream::derive(std::string_view label) const {
  return RngStream(mix_key(key_, hash_label(label)));
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // Rejection below the largest multiple of n to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal() {
  ++normal_draws_;
  // Box-Muller, cosine branch only: deterministic two-uniform cost per draw.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Vector RngStream::normal_vector(int n) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Matrix RngStream::normal_matrix(int rows, int cols) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = normal();
  return m;
}

}  // namespace diffrl
