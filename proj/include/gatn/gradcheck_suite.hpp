#pragma once

#include <string>
#include <vector>

namespace gatn {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

// Finite-difference verification of every differentiable op plus the composed
// attention and two-branch model at toy sizes. `only` filters by name;
// negative_control adds a deliberately corrupted backward that must fail.
std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<std::string>& only = {},
                                                 bool negative_control = false);

std::vector<std::string> gradcheck_op_names();

} // namespace gatn
