#pragma once

#include <cmath>
#include <string>

#include "st/error.hpp"

namespace st {

// Sparse activation S(x) = exp(-(bx - g)^2) - exp(-(bx + g)^2).
// Odd, bounded in (-1, 1), near zero for most inputs and peaking close to
// +-gamma/beta.
struct SparseActivationParams {
  double beta = 1.0;
  double gamma = 2.0;

  void validate() const {
    if (!(beta > 0.0) || !(gamma > 0.0))
      throw ConfigError("sparse activation needs beta > 0 and gamma > 0 (got beta=" +
                        std::to_string(beta) + ", gamma=" + std::to_string(gamma) + ")");
  }
};

enum class DerivMode {
  exact,      // derivative of S as written
  paper_eq5,  // (-2b^2 x + 2gb sign(x)) S(x); disagrees with the calculus near 0
};

inline DerivMode parse_deriv_mode(const std::string& s) {
  if (s == "exact") return DerivMode::exact;
  if (s == "paper_eq5") return DerivMode::paper_eq5;
  throw ConfigError("unknown derivative mode '" + s + "'");
}

template <class T>
T sparse_activation(T x, const SparseActivationParams& p) {
  const T bx = T(p.beta) * x;
  const T g = T(p.gamma);
  // Evaluate the odd part symmetrically so S(-x) == -S(x) bit for bit.
  const T a = std::exp(-(bx - g) * (bx - g));
  const T b = std::exp(-(bx + g) * (bx + g));
  return a - b;
}

template <class T>
T sparse_activation_grad(T x, const SparseActivationParams& p, DerivMode mode = DerivMode::exact) {
  const T beta = T(p.beta);
  const T gamma = T(p.gamma);
  const T bx = beta * x;
  const T a = std::exp(-(bx - gamma) * (bx - gamma));
  const T b = std::exp(-(bx + gamma) * (bx + gamma));
  const T s = a - b;
  if (mode == DerivMode::paper_eq5) {
    const T sign = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
    return (T(-2) * beta * beta * x + T(2) * gamma * beta * sign) * s;
  }
  return T(-2) * beta * beta * x * s + T(2) * beta * gamma * (a + b);
}

// leaky(x) = x * sigmoid(kappa * (|x| - theta)). Odd, passes through the
// origin, shrinks magnitudes below theta and is a contraction toward zero.
struct LeakyParams {
  double kappa = 10.0;
  double theta = 0.1;

  void validate() const {
    if (!(kappa > 0.0)) throw ConfigError("leaky needs kappa > 0");
    if (!(theta >= 0.0)) throw ConfigError("leaky needs theta >= 0");
  }
};

template <class T>
T sigmoid(T u) {
  if (u >= T(0)) return T(1) / (T(1) + std::exp(-u));
  const T e = std::exp(u);
  return e / (T(1) + e);
}

template <class T>
T leaky(T x, const LeakyParams& p) {
  return x * sigmoid(T(p.kappa) * (std::abs(x) - T(p.theta)));
}

// d/dx [x sig(k(|x| - t))] = sig + k|x| sig (1 - sig); continuous at 0.
template <class T>
T leaky_grad(T x, const LeakyParams& p) {
  const T sg = sigmoid(T(p.kappa) * (std::abs(x) - T(p.theta)));
  return sg + T(p.kappa) * std::abs(x) * sg * (T(1) - sg);
}

}  // namespace st
