#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace covpr {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelfCheckOptions {
    std::uint64_t seed = 7;
    // Negative control: skips the fusion normalization so the consistency
    // check visibly fails.
    bool corrupt_sigma = false;
};

// Constraint and oracle suite: fusion consistency, collaborator permutation
// invariance, clamp inertness, redundancy invariance, assignment sums,
// soft-to-hard limit, retrieval against a brute-force ranking, and analytic
// vs finite-difference gradients.
std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options = {});

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace covpr
