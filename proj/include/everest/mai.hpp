#pragma once

#include "everest/activation_source.hpp"
#include "everest/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace everest {

struct MaiEntry {
    InputId input = 0;
    float activation = 0.0f;

    friend bool operator==(const MaiEntry&, const MaiEntry&) = default;
};

// Maximum Activation Index: for each neuron, the top ceil(ratio * nInputs)
// (input, activation) pairs sorted by (activation desc, input asc). When
// co-built with an NPI these entries are that neuron's partition 0.
class MaximumActivationIndex {
public:
    MaximumActivationIndex() = default;
    MaximumActivationIndex(LayerId layer, float ratio, std::uint32_t entryCount,
                           std::vector<std::vector<MaiEntry>> perNeuron);

    LayerId layer() const noexcept { return layer_; }
    float ratio() const noexcept { return ratio_; }
    std::uint32_t entry_count() const noexcept { return entryCount_; }
    std::uint32_t neuron_count() const noexcept { return static_cast<std::uint32_t>(perNeuron_.size()); }
    bool empty() const noexcept { return entryCount_ == 0; }

    std::span<const MaiEntry> entries(NeuronId neuron) const;
    // Stored activation of `input` when it is in MAI(neuron).
    std::optional<float> contains(NeuronId neuron, InputId input) const;
    // Position of `input` in MAI(neuron).
    std::optional<std::size_t> position(NeuronId neuron, InputId input) const;

    std::size_t storage_bytes() const noexcept {
        return static_cast<std::size_t>(entryCount_) * perNeuron_.size() * 8;
    }

    friend bool operator==(const MaximumActivationIndex&, const MaximumActivationIndex&) = default;

private:
    LayerId layer_{};
    float ratio_ = 0.0f;
    std::uint32_t entryCount_ = 0;
    std::vector<std::vector<MaiEntry>> perNeuron_;
};

// ceil(ratio * nInputs), tolerant to the float representation of ratio.
std::uint32_t mai_entry_count(float ratio, std::size_t nInputs);

MaximumActivationIndex build_mai(const ActivationMatrix& acts, float ratio);

} // namespace everest
