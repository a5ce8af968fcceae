#pragma once

#include "everest/activation_source.hpp"
#include "everest/types.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace everest {

struct NpiBuildOptions {
    // Number of top activations per neuron held by a co-built MAI. When > 0
    // those inputs form partition 0 and the rest is split equi-depth over
    // partitions 1..nPartitions-1.
    std::size_t maiEntries = 0;
    // Accept a non power-of-two partition count; PIDs are then stored
    // unpacked, one byte each.
    bool allowNonPowerOfTwo = false;
};

// Per-neuron equi-depth range partitions over activation values. Partition 0
// holds the largest activations. PIDs are bit-packed per neuron row
// (least-significant bits first, each row padded to a byte boundary), and
// each partition carries its min/max activation.
class NeuralPartitionIndex {
public:
    NeuralPartitionIndex() = default;

    // Assemble from stored parts; validates sizes and PID ranges.
    static NeuralPartitionIndex from_parts(LayerId layer, std::uint32_t nInputs, std::uint32_t nNeurons,
                                           std::uint32_t nPartitions, std::uint8_t bitsPerPid,
                                           std::vector<std::uint8_t> packedPids, std::vector<float> lowerBounds,
                                           std::vector<float> upperBounds);

    LayerId layer() const noexcept { return layer_; }
    std::uint32_t input_count() const noexcept { return nInputs_; }
    std::uint32_t neuron_count() const noexcept { return nNeurons_; }
    std::uint32_t partition_count() const noexcept { return nPartitions_; }
    std::uint8_t bits_per_pid() const noexcept { return bitsPerPid_; }
    std::size_t row_bytes() const noexcept { return rowBytes_; }

    PartitionId get_pid(NeuronId neuron, InputId input) const;
    // Inputs whose PID for `neuron` equals `pid`, ascending by id. Scans the
    // packed row.
    std::vector<InputId> get_input_ids(NeuronId neuron, PartitionId pid) const;
    // (lBnd, uBnd)
    std::pair<float, float> bounds(NeuronId neuron, PartitionId pid) const;
    std::size_t partition_size(NeuronId neuron, PartitionId pid) const;
    // Largest partition size; the R of the access bound.
    std::size_t max_partition_size() const noexcept { return (nInputs_ + nPartitions_ - 1) / nPartitions_; }

    std::size_t pid_bytes() const noexcept { return packedPids_.size(); }
    std::size_t bounds_bytes() const noexcept { return (lower_.size() + upper_.size()) * sizeof(float); }

    const std::vector<std::uint8_t>& packed_pids() const noexcept { return packedPids_; }
    const std::vector<float>& lower_bounds() const noexcept { return lower_; }
    const std::vector<float>& upper_bounds() const noexcept { return upper_; }

    friend bool operator==(const NeuralPartitionIndex&, const NeuralPartitionIndex&) = default;

    // Bits used per PID: log2(nPartitions) when a power of two, 8 otherwise.
    static std::uint8_t bits_for(std::uint32_t nPartitions) noexcept;

private:
    friend NeuralPartitionIndex build_npi(const ActivationMatrix&, std::uint32_t, const NpiBuildOptions&);

    void init_layout(LayerId layer, std::uint32_t nInputs, std::uint32_t nNeurons, std::uint32_t nPartitions);
    void set_pid(NeuronId neuron, InputId input, std::uint32_t pid);
    std::uint32_t read_pid(NeuronId neuron, InputId input) const noexcept;
    void check_neuron(NeuronId neuron) const;
    void check_pid(PartitionId pid) const;

    LayerId layer_{};
    std::uint32_t nInputs_ = 0;
    std::uint32_t nNeurons_ = 0;
    std::uint32_t nPartitions_ = 1;
    std::uint8_t bitsPerPid_ = 0;
    std::size_t rowBytes_ = 0;
    std::vector<std::uint8_t> packedPids_;
    std::vector<float> lower_; // [neuron * nPartitions + pid]
    std::vector<float> upper_;
};

// Sort each neuron's inputs by (activation desc, inputId asc) and cut the
// order into equi-depth partitions. When nPartitions does not divide the
// input count the first (n mod nPartitions) partitions get one extra input.
NeuralPartitionIndex build_npi(const ActivationMatrix& acts, std::uint32_t nPartitions,
                               const NpiBuildOptions& options = {});

bool is_power_of_two(std::uint64_t v) noexcept;

// Inputs of one neuron ordered by (activation desc, inputId asc).
std::vector<InputId> descending_order(const ActivationMatrix& acts, NeuronId neuron);

} // namespace everest
