#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "crowdkernel/embedding.hpp"
#include "crowdkernel/types.hpp"

namespace ck_test {

using crowdkernel::Choice;
using crowdkernel::ObjectId;
using crowdkernel::Triple;
using crowdkernel::TripleResponse;

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

inline Eigen::MatrixXd random_symmetric(Eigen::Index n, std::mt19937_64& rng, double sd = 1.0) {
  const Eigen::MatrixXd a = gaussian(n, n, rng, sd);
  return 0.5 * (a + a.transpose());
}

/// Random unit-diagonal PSD matrix: normalised Gram matrix of Gaussian rows.
inline Eigen::MatrixXd random_correlation(Eigen::Index n, Eigen::Index rank, std::mt19937_64& rng) {
  Eigen::MatrixXd m = gaussian(n, rank, rng);
  m.rowwise().normalize();
  Eigen::MatrixXd k = m * m.transpose();
  k = 0.5 * (k + k.transpose());
  k.diagonal().setOnes();
  return k;
}

inline Triple random_triple(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<ObjectId> pick(0, n - 1);
  Triple t{pick(rng), pick(rng), pick(rng)};
  while (!t.distinct()) t = {pick(rng), pick(rng), pick(rng)};
  return t;
}

inline std::vector<TripleResponse> random_responses(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<TripleResponse> out;
  for (std::size_t i = 0; i < m; ++i) {
    TripleResponse r;
    r.triple = random_triple(n, rng);
    r.choice = coin(rng) ? Choice::Left : Choice::Right;
    out.push_back(r);
  }
  return out;
}

inline TripleResponse response(ObjectId a, ObjectId b, ObjectId c, Choice ch = Choice::Left) {
  TripleResponse r;
  r.triple = {a, b, c};
  r.choice = ch;
  return r;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
}

}  // namespace ck_test
