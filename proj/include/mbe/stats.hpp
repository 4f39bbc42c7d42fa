#pragma once

#include <cstdint>

namespace mbe {

// Spike accounting for one operation site. Each forward fills its own copy;
// copies are merged afterwards, so no counter is shared between threads.
struct SiteStats {
    std::int64_t spikes = 0;     // emitted spikes
    std::int64_t slots = 0;      // basis x timestep x element opportunities
    std::int64_t sops = 0;       // spike-gated additions performed
    std::int64_t elements = 0;   // values processed
    std::int64_t saturated = 0;  // inputs clamped to the calibrated range

    SiteStats& operator+=(const SiteStats& o) {
        spikes += o.spikes;
        slots += o.slots;
        sops += o.sops;
        elements += o.elements;
        saturated += o.saturated;
        return *this;
    }
    friend bool operator==(const SiteStats&, const SiteStats&) = default;
};

}  // namespace mbe
