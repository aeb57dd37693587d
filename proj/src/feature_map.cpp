#include "limarec/feature_map.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace limarec {

FeatureMapSpec FeatureMapSpec::draw(std::size_t input_dim, std::size_t feature_dim,
                                    bool scale_by_sqrt_d, SeededRng& rng) {
  if (input_dim == 0 || feature_dim == 0)
    throw std::invalid_argument("FeatureMapSpec: dimensions must be positive");
  FeatureMapSpec spec;
  spec.input_dim = input_dim;
  spec.feature_dim = feature_dim;
  spec.omega = gaussian_matrix(feature_dim, input_dim, rng);
  spec.scale_by_sqrt_d = scale_by_sqrt_d;
  return spec;
}

double FeatureMapSpec::input_scale() const {
  return scale_by_sqrt_d ? std::pow(static_cast<double>(input_dim), -0.25) : 1.0;
}

namespace {

void check_input(const FeatureMapSpec& spec, std::span<const double> x, std::span<double> out) {
  if (x.size() != spec.input_dim)
    throw std::invalid_argument("feature map: input has " + std::to_string(x.size()) +
                                " entries, expected " + std::to_string(spec.input_dim));
  if (out.size() != spec.feature_dim)
    throw std::invalid_argument("feature map: output size mismatch");
}

// Writes the log-features w_i.x' - |x'|^2/2 into out, x' = scale * x.
void log_features(const FeatureMapSpec& spec, std::span<const double> x, std::span<double> out) {
  const double c = spec.input_scale();
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double half_norm = 0.5 * c * c * sq;
  for (std::size_t i = 0; i < spec.feature_dim; ++i)
    out[i] = c * dot(spec.omega.row(i), x) - half_norm;
}

}  // namespace

void apply_into(const FeatureMapSpec& spec, std::span<const double> x, std::span<double> out) {
  check_input(spec, x, out);
  log_features(spec, x, out);
  const double log_norm = 0.5 * std::log(static_cast<double>(spec.feature_dim));
  for (double& v : out) v = std::exp(v - log_norm);
}

Vector apply_features(const FeatureMapSpec& spec, std::span<const double> x) {
  Vector out(spec.feature_dim);
  apply_into(spec, x, out);
  return out;
}

void apply_query_into(const FeatureMapSpec& spec, std::span<const double> x,
                      std::span<double> out) {
  check_input(spec, x, out);
  log_features(spec, x, out);
  double mx = out[0];
  for (double v : out) mx = std::max(mx, v);
  for (double& v : out) v = std::exp(v - mx);
}

void apply_backward(const FeatureMapSpec& spec, std::span<const double> x,
                    std::span<const double> features, std::span<const double> grad_features,
                    std::span<double> grad_x) {
  // d phi_i / dx = c * phi_i * (w_i - c x)
  const double c = spec.input_scale();
  double total = 0.0;
  for (std::size_t i = 0; i < spec.feature_dim; ++i) {
    const double g = grad_features[i] * features[i];
    if (g == 0.0) continue;
    total += g;
    axpy(c * g, spec.omega.row(i), grad_x);
  }
  axpy(-c * c * total, x, grad_x);
}

}  // namespace limarec
