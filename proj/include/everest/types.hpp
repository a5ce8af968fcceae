#pragma once

#include <compare>
#include <cstdint>
#include <functional>

namespace everest {

using InputId = std::uint32_t;
using NeuronId = std::uint32_t;

// Position of a layer in model order.
struct LayerId {
    std::uint32_t index = 0;

    constexpr LayerId() = default;
    constexpr explicit LayerId(std::uint32_t i) : index(i) {}

    friend constexpr auto operator<=>(LayerId, LayerId) = default;
};

struct PartitionId {
    std::uint32_t value = 0;

    constexpr PartitionId() = default;
    constexpr explicit PartitionId(std::uint32_t v) : value(v) {}

    friend constexpr auto operator<=>(PartitionId, PartitionId) = default;
};

} // namespace everest

template <>
struct std::hash<everest::LayerId> {
    std::size_t operator()(everest::LayerId l) const noexcept { return std::hash<std::uint32_t>{}(l.index); }
};
