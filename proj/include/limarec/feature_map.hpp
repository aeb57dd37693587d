#pragma once

#include <cstddef>
#include <span>

#include "limarec/numerics.hpp"

namespace limarec {

// Positive random features for the softmax kernel:
//
//   phi(x) = m^{-1/2} exp(-|x|^2 / 2) (exp(w_1.x), ..., exp(w_m.x))
//
// with rows w_i of omega drawn i.i.d. from N(0, I_d), so that
// E[phi(q).phi(k)] = exp(q.k). When scale_by_sqrt_d is set the input is first
// multiplied by d^{-1/4}; applying that to both queries and keys turns the
// kernel into exp(q.k / sqrt(d)). Omega is frozen once drawn.
struct FeatureMapSpec {
  std::size_t input_dim = 0;
  std::size_t feature_dim = 0;
  Matrix omega;  // feature_dim x input_dim
  bool scale_by_sqrt_d = true;

  static FeatureMapSpec draw(std::size_t input_dim, std::size_t feature_dim, bool scale_by_sqrt_d,
                             SeededRng& rng);

  double input_scale() const;
  bool operator==(const FeatureMapSpec&) const = default;
};

// Exact features. Each exponent w_i.x - |x|^2/2 - ln(m)/2 is assembled in log
// space before a single exp, so large |x| cannot overflow exp(w_i.x) on its own.
Vector apply_features(const FeatureMapSpec& spec, std::span<const double> x);
void apply_into(const FeatureMapSpec& spec, std::span<const double> x, std::span<double> out);

// Features divided by their largest component (max-subtracted exponents).
// Only valid where phi enters as a query of a ratio: the common factor cancels
// between numerator and denominator, and it keeps every query feature <= 1
// with at least one feature equal to 1, so denominators never underflow.
void apply_query_into(const FeatureMapSpec& spec, std::span<const double> x,
                      std::span<double> out);

// Backward of apply_into / apply_query_into. Given the features produced for x
// and dL/dfeatures, accumulates dL/dx into grad_x. For the query variant the
// normalizer is treated as a constant, which is exact for ratio consumers.
void apply_backward(const FeatureMapSpec& spec, std::span<const double> x,
                    std::span<const double> features, std::span<const double> grad_features,
                    std::span<double> grad_x);

}  // namespace limarec
