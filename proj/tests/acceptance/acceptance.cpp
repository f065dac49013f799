// Runs the acceptance criteria at their stated tolerances and runtime limits.
// Prints one PASS/FAIL line per criterion; exits 1 if any fails.
//
//   crit_acceptance            all criteria
//   crit_acceptance 3 5        a subset, by number

#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "crit/verify.hpp"

namespace {

struct Criterion {
  int id;
  const char* suite;
  const char* title;
  double limit_s;
};

const std::vector<Criterion> criteria = {
    {1, "relu-criticality", "ReLU criticality line", 60},
    {2, "one-step", "one-step tuning", 60},
    {3, "convergence-band", "convergence band", 1200},
    {4, "relu-dynamics", "tuner vs ReLU map trajectory", 300},
    {5, "bn-chaos", "BN chaos value", 900},
    {6, "bn-residual", "BN residual criticality", 900},
    {7, "bn-batch-size", "batch-size saturation", 600},
    {8, "resmlp", "ResMLP closed form", 600},
    {9, "estimator", "estimator unbiasedness", 120},
    {10, "factorization", "factorization", 300},
    {11, "chi-delta", "chi_Delta(ReLU) = 0", 60},
    {12, "kernel-fixed-point", "kernel fixed point", 1},
    {13, "lr-scaling", "learning-rate scaling", 60},
    {14, "jkl-equivalence", "JKL equivalence", 60},
    {15, "gradient", "gradient check", 60},
};

}  // namespace

int main(int argc, char** argv) {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const crit::SuiteResult r = crit::run_suite(c.suite);
    const bool in_time = r.seconds < c.limit_s;
    const bool ok = r.passed && in_time;
    if (!ok) ++failed;
    std::printf("%s %2d %-30s %8.1fs (limit %gs%s)  %s\n", ok ? "PASS" : "FAIL", c.id, c.title, r.seconds,
                c.limit_s, in_time ? "" : ", exceeded", r.detail.c_str());
  }
  std::printf("%d criteria failed\n", failed);
  return failed ? 1 : 0;
}
