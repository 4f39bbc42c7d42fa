#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "mbe/error.hpp"

namespace mbe {

enum class TargetId { Gelu, Tanh, Silu, Relu, Exp2Frac, Inv, InvSqrt, Identity };

std::string_view target_name(TargetId id);
TargetId parse_target(std::string_view name);  // throws InvalidArgument

// A scalar function restricted to a closed interval [a, b].
struct TargetFn {
    TargetId id = TargetId::Identity;
    double a = 0.0;
    double b = 1.0;

    void validate() const;
    double operator()(double x) const;
};

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace mbe
