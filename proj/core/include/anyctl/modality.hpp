#pragma once

#include <array>
#include <string>

#include "anyctl/error.hpp"

namespace anyctl {

// Spatial condition kinds, in canonical order. Task tokens, dataset fields,
// and metric selection all key off this order.
enum class Modality : int { edge = 0, depth = 1, seg = 2 };

inline constexpr std::array<Modality, 3> kAllModalities = {
    Modality::edge, Modality::depth, Modality::seg};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::edge: return "edge";
        case Modality::depth: return "depth";
        case Modality::seg: return "seg";
    }
    throw ContractError("unknown modality");
}

inline Modality modality_from_name(const std::string& s) {
    for (Modality m : kAllModalities)
        if (s == modality_name(m)) return m;
    throw ConfigError("unknown modality: " + s);
}

}  // namespace anyctl
