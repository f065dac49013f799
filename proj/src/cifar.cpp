#include "crit/cifar.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "crit/error.hpp"

namespace crit {

std::filesystem::path resolve_data_path(const std::filesystem::path& path) {
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("CRIT_TUNER_DATA"); root && *root) return std::filesystem::path(root) / path;
  return path;
}

Tensor standardize_samples(const Tensor& batch) {
  if (batch.rank() < 2) throw InvalidArgument("standardize_samples expects a [|B|, ...] batch");
  Tensor out = batch;
  const std::size_t B = batch.shape().front();
  const std::size_t n = batch.size() / B;
  for (std::size_t s = 0; s < B; ++s) {
    double* x = out.raw() + s * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= double(n);
    if (!(var > 0.0)) throw InvalidArgument("standardize_samples: sample " + std::to_string(s) + " is constant");
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < n; ++i) x[i] = (x[i] - mean) * inv;
  }
  return out;
}

Tensor load_cifar10(const std::filesystem::path& path, std::size_t n, bool normalize) {
  if (n == 0) throw InvalidArgument("load_cifar10: n must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 file " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (size == 0 || size % cifar_record_bytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(size) + " is not a whole number of " +
                      std::to_string(cifar_record_bytes) + "-byte records");
  }
  const std::size_t records = size / cifar_record_bytes;
  if (n > records) {
    throw FormatError(path.string() + ": requested " + std::to_string(n) + " images but file holds " +
                      std::to_string(records));
  }
  Tensor out({n, 3, 32, 32});
  std::vector<unsigned char> rec(cifar_record_bytes);
  for (std::size_t s = 0; s < n; ++s) {
    if (!in.read(reinterpret_cast<char*>(rec.data()), std::streamsize(rec.size()))) {
      throw FormatError(path.string() + ": truncated record " + std::to_string(s));
    }
    if (rec[0] > 9) throw FormatError(path.string() + ": bad label in record " + std::to_string(s));
    double* x = out.raw() + s * cifar_image_bytes;
    for (std::size_t i = 0; i < cifar_image_bytes; ++i) x[i] = double(rec[i + 1]) / 255.0;
  }
  return normalize ? standardize_samples(out) : out;
}

}  // namespace crit
