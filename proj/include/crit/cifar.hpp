#pragma once

#include <cstddef>
#include <filesystem>

#include "crit/tensor.hpp"

namespace crit {

inline constexpr std::size_t cifar_record_bytes = 3073;
inline constexpr std::size_t cifar_image_bytes = 3072;

/// First n images of a CIFAR-10 binary batch as [n, 3, 32, 32] in [0, 1].
/// With normalize, every image is shifted and scaled to zero mean and unit
/// variance. Labels are dropped.
Tensor load_cifar10(const std::filesystem::path& path, std::size_t n, bool normalize = true);

/// Relative paths resolve against $CRIT_TUNER_DATA when it is set.
std::filesystem::path resolve_data_path(const std::filesystem::path& path);

/// Per-sample zero mean and unit (population) variance.
Tensor standardize_samples(const Tensor& batch);

}  // namespace crit
