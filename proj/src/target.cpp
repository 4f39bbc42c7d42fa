#include "mbe/target.hpp"

#include <array>
#include <utility>

namespace mbe {

namespace {

constexpr std::array<std::pair<TargetId, std::string_view>, 8> kNames{{
    {TargetId::Gelu, "gelu"},
    {TargetId::Tanh, "tanh"},
    {TargetId::Silu, "silu"},
    {TargetId::Relu, "relu"},
    {TargetId::Exp2Frac, "exp2"},
    {TargetId::Inv, "inv"},
    {TargetId::InvSqrt, "invsqrt"},
    {TargetId::Identity, "identity"},
}};

}  // namespace

std::string_view target_name(TargetId id) {
    for (const auto& [k, v] : kNames) {
        if (k == id) return v;
    }
    return "unknown";
}

TargetId parse_target(std::string_view name) {
    for (const auto& [k, v] : kNames) {
        if (v == name) return k;
    }
    throw InvalidArgument("unknown target '" + std::string(name) + "'");
}

void TargetFn::validate() const {
    if (!std::isfinite(a) || !std::isfinite(b) || !(a < b)) {
        throw InvalidArgument("target interval must be finite with a < b");
    }
    if ((id == TargetId::Inv || id == TargetId::InvSqrt) && !(a > 0.0)) {
        throw InvalidArgument("inv/invsqrt targets need a strictly positive interval");
    }
}

double TargetFn::operator()(double x) const {
    switch (id) {
        case TargetId::Gelu: return gelu(x);
        case TargetId::Tanh: return std::tanh(x);
        case TargetId::Silu: return silu(x);
        case TargetId::Relu: return x > 0.0 ? x : 0.0;
        case TargetId::Exp2Frac: return std::exp2(x);
        case TargetId::Inv: return 1.0 / x;
        case TargetId::InvSqrt: return 1.0 / std::sqrt(x);
        case TargetId::Identity: return x;
    }
    return x;
}

}  // namespace mbe
