#pragma once

#include <string>
#include <vector>

#include "bridgecond/tensor.hpp"

namespace bridgecond {

struct GradCheckResult {
  std::string block;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

// |a-b| / max(|a|,|b|,floor); the floor keeps near-zero gradients honest
// against the O(1e-10) truncation noise of central differences.
double grad_rel_err(double analytic, double numeric, double floor = 1e-3);

// Runs the finite-difference oracle (h = 1e-5) against backward() for one
// named block on a tiny seeded instance. Known blocks: matmul, softmax,
// layer_norm, attention, lora, gelu, mse, nll, qformer, bim, iaa, denoiser,
// stage1_loss, stage2_loss, stage3_loss.
GradCheckResult gradcheck_block(const std::string& name, double tolerance = 1e-4);

std::vector<std::string> gradcheck_block_names();

// All blocks (or a single one); prints one row per block to stdout when
// verbose. Returns the results.
std::vector<GradCheckResult> run_gradcheck(const std::string& which, bool verbose,
                                           double tolerance = 1e-4);

}  // namespace bridgecond
