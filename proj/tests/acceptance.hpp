// SPDX-License-Identifier: Apache-2.0
//
// Shared result type for the acceptance binary. Deliberately free of dualvae
// types so that 32-bit and 64-bit translation units can both include it.

#pragma once

#include <string>
#include <vector>

namespace acceptance {

struct Outcome {
    int id = 0;
    bool passed = false;
    std::string summary;
    double seconds = 0.0;
};

/// Criteria 1 to 5, evaluated with 64-bit reals.
std::vector<Outcome> run_math_criteria();

/// Criteria 6 to 10, evaluated with 32-bit reals.
std::vector<Outcome> run_trained_criteria();

}  // namespace acceptance
