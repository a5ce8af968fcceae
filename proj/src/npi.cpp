#include "everest/npi.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <string>

namespace everest {

bool is_power_of_two(std::uint64_t v) noexcept {
    return std::has_single_bit(v);
}

std::uint8_t NeuralPartitionIndex::bits_for(std::uint32_t nPartitions) noexcept {
    if (is_power_of_two(nPartitions)) {
        return static_cast<std::uint8_t>(std::countr_zero(nPartitions));
    }
    return 8;
}

std::vector<InputId> descending_order(const ActivationMatrix& acts, NeuronId neuron) {
    std::vector<InputId> order(acts.rows());
    std::iota(order.begin(), order.end(), InputId{0});
    std::ranges::stable_sort(order, [&](InputId a, InputId b) { return acts.at(a, neuron) > acts.at(b, neuron); });
    return order;
}

void NeuralPartitionIndex::init_layout(LayerId layer, std::uint32_t nInputs, std::uint32_t nNeurons,
                                       std::uint32_t nPartitions) {
    layer_ = layer;
    nInputs_ = nInputs;
    nNeurons_ = nNeurons;
    nPartitions_ = nPartitions;
    bitsPerPid_ = bits_for(nPartitions);
    rowBytes_ = (static_cast<std::size_t>(nInputs) * bitsPerPid_ + 7) / 8;
    packedPids_.assign(rowBytes_ * nNeurons, 0);
    lower_.assign(static_cast<std::size_t>(nNeurons) * nPartitions, 0.0f);
    upper_.assign(static_cast<std::size_t>(nNeurons) * nPartitions, 0.0f);
}

void NeuralPartitionIndex::set_pid(NeuronId neuron, InputId input, std::uint32_t pid) {
    std::uint8_t* row = packedPids_.data() + static_cast<std::size_t>(neuron) * rowBytes_;
    const std::size_t bit0 = static_cast<std::size_t>(input) * bitsPerPid_;
    for (unsigned k = 0; k < bitsPerPid_; ++k) {
        const std::size_t bit = bit0 + k;
        const auto mask = static_cast<std::uint8_t>(1u << (bit % 8));
        if ((pid >> k) & 1u) {
            row[bit / 8] |= mask;
        } else {
            row[bit / 8] &= static_cast<std::uint8_t>(~mask);
        }
    }
}

std::uint32_t NeuralPartitionIndex::read_pid(NeuronId neuron, InputId input) const noexcept {
    if (bitsPerPid_ == 0) {
        return 0;
    }
    const std::uint8_t* row = packedPids_.data() + static_cast<std::size_t>(neuron) * rowBytes_;
    const std::size_t bit0 = static_cast<std::size_t>(input) * bitsPerPid_;
    const std::size_t byte0 = bit0 / 8;
    // PIDs are at most 24 bits wide, so a 4-byte window always covers one.
    std::uint32_t window = 0;
    for (std::size_t b = 0; b < 4 && byte0 + b < rowBytes_; ++b) {
        window |= static_cast<std::uint32_t>(row[byte0 + b]) << (8 * b);
    }
    return (window >> (bit0 % 8)) & ((1u << bitsPerPid_) - 1u);
}

void NeuralPartitionIndex::check_neuron(NeuronId neuron) const {
    if (neuron >= nNeurons_) {
        throw IndexOutOfRange("neuron " + std::to_string(neuron) + " out of range (layer has " +
                              std::to_string(nNeurons_) + " neurons)");
    }
}

void NeuralPartitionIndex::check_pid(PartitionId pid) const {
    if (pid.value >= nPartitions_) {
        throw IndexOutOfRange("partition " + std::to_string(pid.value) + " out of range (" +
                              std::to_string(nPartitions_) + " partitions)");
    }
}

PartitionId NeuralPartitionIndex::get_pid(NeuronId neuron, InputId input) const {
    check_neuron(neuron);
    if (input >= nInputs_) {
        throw IndexOutOfRange("input " + std::to_string(input) + " out of range");
    }
    return PartitionId(read_pid(neuron, input));
}

std::vector<InputId> NeuralPartitionIndex::get_input_ids(NeuronId neuron, PartitionId pid) const {
    check_neuron(neuron);
    check_pid(pid);
    std::vector<InputId> ids;
    for (InputId x = 0; x < nInputs_; ++x) {
        if (read_pid(neuron, x) == pid.value) {
            ids.push_back(x);
        }
    }
    return ids;
}

std::size_t NeuralPartitionIndex::partition_size(NeuronId neuron, PartitionId pid) const {
    check_neuron(neuron);
    check_pid(pid);
    std::size_t n = 0;
    for (InputId x = 0; x < nInputs_; ++x) {
        n += read_pid(neuron, x) == pid.value;
    }
    return n;
}

std::pair<float, float> NeuralPartitionIndex::bounds(NeuronId neuron, PartitionId pid) const {
    check_neuron(neuron);
    check_pid(pid);
    const std::size_t at = static_cast<std::size_t>(neuron) * nPartitions_ + pid.value;
    return {lower_[at], upper_[at]};
}

NeuralPartitionIndex NeuralPartitionIndex::from_parts(LayerId layer, std::uint32_t nInputs, std::uint32_t nNeurons,
                                                      std::uint32_t nPartitions, std::uint8_t bitsPerPid,
                                                      std::vector<std::uint8_t> packedPids,
                                                      std::vector<float> lowerBounds, std::vector<float> upperBounds) {
    if (nPartitions == 0) {
        throw ConfigError("nPartitions must be >= 1");
    }
    if (bitsPerPid != bits_for(nPartitions)) {
        throw ConfigError("bitsPerPid " + std::to_string(bitsPerPid) + " does not match nPartitions " +
                          std::to_string(nPartitions));
    }
    NeuralPartitionIndex idx;
    idx.init_layout(layer, nInputs, nNeurons, nPartitions);
    if (packedPids.size() != idx.packedPids_.size() || lowerBounds.size() != idx.lower_.size() ||
        upperBounds.size() != idx.upper_.size()) {
        throw ConfigError("NPI part sizes do not match its header");
    }
    idx.packedPids_ = std::move(packedPids);
    idx.lower_ = std::move(lowerBounds);
    idx.upper_ = std::move(upperBounds);
    for (NeuronId n = 0; n < nNeurons; ++n) {
        for (InputId x = 0; x < nInputs; ++x) {
            if (idx.read_pid(n, x) >= nPartitions) {
                throw ConfigError("stored PID out of range");
            }
        }
    }
    return idx;
}

NeuralPartitionIndex build_npi(const ActivationMatrix& acts, std::uint32_t nPartitions, const NpiBuildOptions& options) {
    const auto nInputs = static_cast<std::uint32_t>(acts.rows());
    const auto nNeurons = static_cast<std::uint32_t>(acts.cols());
    if (nPartitions == 0 || nPartitions > nInputs) {
        throw ConfigError("nPartitions must be in [1, nInputs], got " + std::to_string(nPartitions));
    }
    if (nPartitions > (1u << 24)) {
        throw ConfigError("at most 2^24 partitions are supported");
    }
    if (!is_power_of_two(nPartitions)) {
        if (!options.allowNonPowerOfTwo) {
            throw ConfigError("nPartitions must be a power of two, got " + std::to_string(nPartitions));
        }
        if (nPartitions > 256) {
            throw ConfigError("unpacked PIDs support at most 256 partitions");
        }
    }
    const std::size_t head = std::min<std::size_t>(options.maiEntries, nInputs);
    if (head > 0 && head < nInputs && nPartitions < 2) {
        throw ConfigError("a co-built MAI needs at least two partitions");
    }

    // Partition boundaries in descending order: [start[p], start[p+1]).
    std::vector<std::size_t> start(nPartitions + 1, 0);
    if (head == 0) {
        const std::size_t base = nInputs / nPartitions;
        const std::size_t extra = nInputs % nPartitions;
        for (std::uint32_t p = 0; p < nPartitions; ++p) {
            start[p + 1] = start[p] + base + (p < extra ? 1 : 0);
        }
    } else {
        start[1] = head;
        const std::size_t rest = nInputs - head;
        const std::uint32_t tail = nPartitions - 1;
        for (std::uint32_t q = 0; q < tail; ++q) {
            const std::size_t size = rest / tail + (q < rest % tail ? 1 : 0);
            start[q + 2] = start[q + 1] + size;
        }
    }

    NeuralPartitionIndex idx;
    idx.init_layout(acts.layer(), nInputs, nNeurons, nPartitions);
    for (NeuronId n = 0; n < nNeurons; ++n) {
        const std::vector<InputId> order = descending_order(acts, n);
        for (std::uint32_t p = 0; p < nPartitions; ++p) {
            const std::size_t at = static_cast<std::size_t>(n) * nPartitions + p;
            if (start[p] == start[p + 1]) {
                // Empty partition: collapse onto the previous partition's lower
                // bound so the bounds stay ordered.
                const float edge = p == 0 ? acts.at(order.front(), n) : idx.lower_[at - 1];
                idx.lower_[at] = edge;
                idx.upper_[at] = edge;
                continue;
            }
            idx.upper_[at] = acts.at(order[start[p]], n);
            idx.lower_[at] = acts.at(order[start[p + 1] - 1], n);
            for (std::size_t r = start[p]; r < start[p + 1]; ++r) {
                idx.set_pid(n, order[r], p);
            }
        }
    }
    return idx;
}

} // namespace everest
