#pragma once

#include <string>
#include <string_view>

namespace crit {

enum class ActivationKind { relu, gelu, tanh, linear };

std::string_view to_string(ActivationKind kind) noexcept;
ActivationKind parse_activation(std::string_view name);

double relu(double x) noexcept;
/// Exact x * Phi(x), not the tanh approximation.
double gelu(double x) noexcept;

/// phi and its first three derivatives. ReLU derivatives at 0 are 0.
double activate(ActivationKind kind, double x) noexcept;
double activate_d1(ActivationKind kind, double x) noexcept;
double activate_d2(ActivationKind kind, double x) noexcept;
double activate_d3(ActivationKind kind, double x) noexcept;

double normal_cdf(double x) noexcept;
double normal_pdf(double x) noexcept;

}  // namespace crit
