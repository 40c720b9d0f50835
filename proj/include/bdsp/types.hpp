#pragma once

#include <cstdint>

namespace bdsp {

using OrgId = std::uint32_t;
using ValidatorId = std::uint32_t;

/// Bitmask over a game's player positions (bit p set = p-th player present).
using Coalition = std::uint64_t;

}  // namespace bdsp
