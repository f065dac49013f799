#include "crit/activation.hpp"

#include <cmath>
#include <numbers>

#include "crit/error.hpp"

namespace crit {

std::string_view to_string(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::gelu: return "gelu";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::linear: return "linear";
  }
  return "?";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "gelu") return ActivationKind::gelu;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "linear") return ActivationKind::linear;
  throw InvalidArgument("unknown activation '" + std::string(name) + "'");
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double normal_pdf(double x) noexcept { return std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2); }

double relu(double x) noexcept { return x > 0.0 ? x : 0.0; }

double gelu(double x) noexcept { return x * normal_cdf(x); }

double activate(ActivationKind kind, double x) noexcept {
  switch (kind) {
    case ActivationKind::relu: return relu(x);
    case ActivationKind::gelu: return gelu(x);
    case ActivationKind::tanh: return std::tanh(x);
    case ActivationKind::linear: return x;
  }
  return x;
}

double activate_d1(ActivationKind kind, double x) noexcept {
  switch (kind) {
    case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::gelu: return normal_cdf(x) + x * normal_pdf(x);
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::linear: return 1.0;
  }
  return 1.0;
}

double activate_d2(ActivationKind kind, double x) noexcept {
  switch (kind) {
    case ActivationKind::relu: return 0.0;
    case ActivationKind::gelu: return normal_pdf(x) * (2.0 - x * x);
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case ActivationKind::linear: return 0.0;
  }
  return 0.0;
}

double activate_d3(ActivationKind kind, double x) noexcept {
  switch (kind) {
    case ActivationKind::relu: return 0.0;
    case ActivationKind::gelu: return normal_pdf(x) * (x * x * x - 4.0 * x);
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t);
    }
    case ActivationKind::linear: return 0.0;
  }
  return 0.0;
}

}  // namespace crit
