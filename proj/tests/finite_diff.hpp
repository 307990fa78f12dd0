#ifndef STEVE_TESTS_FINITE_DIFF_HPP
#define STEVE_TESTS_FINITE_DIFF_HPP

#include <algorithm>
#include <functional>

#include <Eigen/Core>

namespace steve::testing {

// Central differences of f at x with step h.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

// |a - n| / max(|a|, |n|), with both vectors compared as wholes. Two
// (near-)zero gradients count as a match.
inline double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-10});
  return (analytic - numeric).norm() / scale;
}

// Relative error against central differences at a few step sizes, keeping
// the best. A probe that straddles a ReLU kink spoils one step size but
// rarely all of them.
inline double gradient_error(const Eigen::VectorXd& analytic,
                             const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x) {
  double best = relative_error(analytic, numeric_gradient(f, x, 1e-5));
  for (double h : {1e-6, 1e-7}) {
    if (best < 1e-6) break;
    best = std::min(best, relative_error(analytic, numeric_gradient(f, x, h)));
  }
  return best;
}

}  // namespace steve::testing

#endif  // STEVE_TESTS_FINITE_DIFF_HPP
