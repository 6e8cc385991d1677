// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dualvae {

/// A caller broke an operation's precondition (shape mismatch, bad argument).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

/// A computation produced NaN or Inf.
class NumericFault : public std::runtime_error {
public:
    explicit NumericFault(const std::string& what) : std::runtime_error(what) {}
};

/// File or format problem (unreadable image, bad checkpoint, bad config).
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed configuration text, unknown key or invalid value.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

#define DUALVAE_REQUIRE(cond, msg)                                  \
    do {                                                            \
        if (!(cond)) throw ::dualvae::ContractViolation(msg);       \
    } while (0)

}  // namespace dualvae
