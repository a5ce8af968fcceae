#include "everest/mai.hpp"

#include "everest/errors.hpp"
#include "everest/npi.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace everest {

MaximumActivationIndex::MaximumActivationIndex(LayerId layer, float ratio, std::uint32_t entryCount,
                                               std::vector<std::vector<MaiEntry>> perNeuron)
    : layer_(layer), ratio_(ratio), entryCount_(entryCount), perNeuron_(std::move(perNeuron)) {
    for (const auto& list : perNeuron_) {
        if (list.size() != entryCount_) {
            throw ConfigError("every MAI list must hold exactly " + std::to_string(entryCount_) + " entries");
        }
        for (std::size_t i = 1; i < list.size(); ++i) {
            const bool ordered = list[i - 1].activation > list[i].activation ||
                                 (list[i - 1].activation == list[i].activation && list[i - 1].input < list[i].input);
            if (!ordered) {
                throw ConfigError("MAI list is not sorted by (activation desc, input asc)");
            }
        }
    }
}

std::span<const MaiEntry> MaximumActivationIndex::entries(NeuronId neuron) const {
    if (neuron >= perNeuron_.size()) {
        throw IndexOutOfRange("neuron " + std::to_string(neuron) + " out of range");
    }
    return perNeuron_[neuron];
}

std::optional<std::size_t> MaximumActivationIndex::position(NeuronId neuron, InputId input) const {
    auto list = entries(neuron);
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list[i].input == input) {
            return i;
        }
    }
    return std::nullopt;
}

std::optional<float> MaximumActivationIndex::contains(NeuronId neuron, InputId input) const {
    if (auto pos = position(neuron, input)) {
        return perNeuron_[neuron][*pos].activation;
    }
    return std::nullopt;
}

std::uint32_t mai_entry_count(float ratio, std::size_t nInputs) {
    if (!(ratio >= 0.0f && ratio <= 1.0f)) {
        throw ContractViolation("MAI ratio must be in [0, 1]");
    }
    // 0.1f * 10 is 1.0000000149; without the slack its ceiling would be 2.
    const double exact = static_cast<double>(ratio) * static_cast<double>(nInputs);
    const double entries = std::ceil(exact - 1e-6 * std::max(1.0, exact));
    return static_cast<std::uint32_t>(std::clamp(entries, 0.0, static_cast<double>(nInputs)));
}

MaximumActivationIndex build_mai(const ActivationMatrix& acts, float ratio) {
    const std::uint32_t m = mai_entry_count(ratio, acts.rows());
    std::vector<std::vector<MaiEntry>> perNeuron(acts.cols());
    for (NeuronId n = 0; n < acts.cols(); ++n) {
        if (m == 0) continue;
        const std::vector<InputId> order = descending_order(acts, n);
        auto& list = perNeuron[n];
        list.reserve(m);
        for (std::size_t r = 0; r < m; ++r) {
            list.push_back({order[r], acts.at(order[r], n)});
        }
    }
    return MaximumActivationIndex(acts.layer(), ratio, m, std::move(perNeuron));
}

} // namespace everest
