#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cbam/tensor.hpp"

namespace cbam {

using MultiInputFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest gradient_relative_error over all inputs of `f`, comparing backward()
// against finite_diff_grad on the scalar loss sum(f(inputs) * R) for a random
// probe R drawn from `rng`.
double max_gradient_error(const MultiInputFn& f, const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                          double eps = 1e-5);

struct GradCheckResult {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Names accepted by check_op_gradient.
const std::vector<std::string>& gradcheck_op_names();

// Runs `trials` randomized checks of one op: inputs from U[-2, 2], weights
// from N(0, 0.1), random shapes. Throws ConfigError on an unknown name.
GradCheckResult check_op_gradient(const std::string& op, std::size_t trials, double tol,
                                  std::uint64_t seed = 1);

// cbam_forward under every arrangement, both spatial descriptors and all
// three channel pooling modes.
std::vector<GradCheckResult> check_full_block(std::size_t trials, double tol, std::uint64_t seed = 1);

}  // namespace cbam
