#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcav/autodiff.hpp"
#include "dcav/parameters.hpp"

namespace dcav::gradcheck {

struct CheckResult {
  std::string name;
  double rel_error = 0;
  bool passed = false;
};

struct SuiteReport {
  double tolerance = 1e-4;
  std::vector<CheckResult> results;

  bool passed() const;
};

/// ‖a − n‖ / max(‖a‖, ‖n‖, 1e-12).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

using Fn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

/// Central differences against the tape gradient for every input entry. A
/// non-scalar output is reduced by a fixed random projection. The reported
/// error is the largest over the inputs.
CheckResult check_function(const std::string& name, const Fn& fn,
                           const std::vector<Tensor<double>>& inputs, double h = 1e-5,
                           double tolerance = 1e-4);

/// Same, perturbing every value of every parameter in `store`; `loss` must
/// return a scalar.
CheckResult check_parameters(const std::string& name, ParameterStore<double>& store,
                             const std::function<Var<double>(Tape<double>&)>& loss,
                             double h = 1e-5, double tolerance = 1e-4);

/// Every primitive and composite block on small random instances.
SuiteReport run_suite(std::uint64_t seed = 7, double tolerance = 1e-4);

}  // namespace dcav::gradcheck
