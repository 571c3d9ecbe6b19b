#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mss/random.hpp"
#include "mss/tensor.hpp"

namespace mss {

/// One tensor whose analytic gradient is to be verified. `value` is perturbed
/// in place during the check and restored afterwards.
struct GradCheckTarget {
  std::string name;
  Tensor* value;
  const Tensor* analytic;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error;
  std::size_t probes;
  bool pass;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double epsilon = 0.0;
  double tolerance = 0.0;

  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }

  std::string to_string() const {
    std::string s;
    char line[160];
    for (const auto& e : entries) {
      std::snprintf(line, sizeof(line), "%-24s probes=%zu max_rel_err=%.3e %s\n",
                    e.name.c_str(), e.probes, e.max_rel_error,
                    e.pass ? "ok" : "FAIL");
      s += line;
    }
    return s;
  }
};

/// Central-difference gradient verification: for each probed element,
/// numeric = (f(x+eps) - f(x-eps)) / (2 eps) is compared against the analytic
/// gradient. The reported error per tensor is the max absolute deviation
/// normalized by the largest gradient magnitude seen in that tensor, so
/// near-zero entries are judged on the tensor's scale rather than their own.
/// Failures are reported, not thrown.
///
/// `scalar_fn` must recompute the objective from the targets' current values.
/// When a tensor has more elements than `max_probes_per_tensor`, a
/// deterministic subset (seeded by `probe_seed`) is probed; the analytic max
/// is still taken over all elements.
inline GradCheckReport finite_difference_check(
    const std::function<double()>& scalar_fn,
    std::span<const GradCheckTarget> targets, double epsilon, double tolerance,
    std::size_t max_probes_per_tensor = std::numeric_limits<std::size_t>::max(),
    std::uint64_t probe_seed = 0) {
  if (epsilon <= 0.0)
    throw validation_error("finite_difference_check: epsilon must be > 0");

  GradCheckReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;

  for (const auto& target : targets) {
    Tensor& value = *target.value;
    const Tensor& analytic = *target.analytic;
    require_same_shape(value, analytic, "finite_difference_check");

    std::vector<std::size_t> probes;
    if (value.size() <= max_probes_per_tensor) {
      probes.resize(value.size());
      for (std::size_t i = 0; i < probes.size(); ++i) probes[i] = i;
    } else {
      // partial Fisher-Yates: first max_probes entries of a seeded shuffle
      std::vector<std::size_t> all(value.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      Rng rng(mix_seed(probe_seed, std::hash<std::string>{}(target.name)));
      for (std::size_t i = 0; i < max_probes_per_tensor; ++i) {
        const std::size_t j = i + rng.below(all.size() - i);
        std::swap(all[i], all[j]);
      }
      probes.assign(all.begin(), all.begin() + max_probes_per_tensor);
    }

    double max_abs_grad = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      max_abs_grad = std::max(max_abs_grad,
                              std::abs(static_cast<double>(analytic[i])));

    double max_abs_diff = 0.0;
    for (std::size_t i : probes) {
      const float saved = value[i];
      value[i] = saved + static_cast<float>(epsilon);
      const double f_plus = scalar_fn();
      value[i] = saved - static_cast<float>(epsilon);
      const double f_minus = scalar_fn();
      value[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      max_abs_grad = std::max(max_abs_grad, std::abs(numeric));
      max_abs_diff = std::max(
          max_abs_diff, std::abs(numeric - static_cast<double>(analytic[i])));
    }

    GradCheckEntry entry;
    entry.name = target.name;
    entry.probes = probes.size();
    entry.max_rel_error =
        max_abs_grad < 1e-8 ? max_abs_diff : max_abs_diff / max_abs_grad;
    entry.pass = entry.max_rel_error <= tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mss
