#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vqmae/ops.hpp"
#include "vqmae/rng.hpp"
#include "vqmae/tensor.hpp"

namespace vqmae {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Compares analytic gradients against central finite differences for a
// scalar-valued function of the given parameters. For large tensors a
// deterministic random subset of coordinates is probed (each probe costs two
// forward passes). The function must be re-evaluatable: it is called once
// under a tape for the analytic pass and many times tape-free for the
// numeric one.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  const std::vector<std::pair<std::string, Tensor>>& params,
                                  double h = 1e-5, std::int64_t max_per_tensor = 24,
                                  std::uint64_t seed = 17) {
  for (auto& [name, cp] : params) {
    Tensor p = cp;  // handle copy, shares storage
    if (!p.requires_grad())
      throw TensorError("grad_check: parameter '" + name + "' does not require grad");
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f();
    if (loss.size() != 1) throw TensorError("grad_check: f must return a scalar");
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, cp] : params) {
    Tensor p = cp;
    analytic.push_back(p.grad());
  }

  GradCheckReport report;
  Rng rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi].second;
    GradCheckEntry entry;
    entry.name = params[pi].first;
    const std::int64_t n = p.size();
    std::vector<std::int64_t> coords;
    if (n <= max_per_tensor) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::vector<char> taken(static_cast<size_t>(n), 0);
      while (static_cast<std::int64_t>(coords.size()) < max_per_tensor) {
        std::int64_t c = static_cast<std::int64_t>(rng.bounded(static_cast<std::uint64_t>(n)));
        if (!taken[static_cast<size_t>(c)]) {
          taken[static_cast<size_t>(c)] = 1;
          coords.push_back(c);
        }
      }
    }
    for (auto c : coords) {
      const double keep = p.values()[static_cast<size_t>(c)];
      p.values()[static_cast<size_t>(c)] = keep + h;
      const double up = f().item();
      p.values()[static_cast<size_t>(c)] = keep - h;
      const double dn = f().item();
      p.values()[static_cast<size_t>(c)] = keep;
      const double numeric = (up - dn) / (2.0 * h);
      const double exact = analytic[pi][static_cast<size_t>(c)];
      const double denom = std::max({1e-6, std::abs(exact), std::abs(numeric)});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(exact - numeric) / denom);
      ++entry.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace vqmae
