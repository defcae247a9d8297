#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "camp/tensor.hpp"

namespace camp {

struct GradCheckCase {
    std::string name;
    std::uint64_t seed = 0;
    GradCheckResult result;
};

// Checks every differentiable operation, each model stage and the full
// encoder + core + loss pipeline at small sizes against central
// differences. Non-scalar outputs are reduced with fixed random weights.
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed, double eps = 1e-5);

// Worst case per name over all seeds, in first-seen order.
std::vector<GradCheckCase> worst_per_case(std::span<const GradCheckCase> cases);

}  // namespace camp
