#include "everest/activation_source.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace everest {

ActivationMatrix::ActivationMatrix(LayerId layer, std::size_t rows, std::size_t cols)
    : layer_(layer), rows_(rows), cols_(cols), values_(rows * cols, 0.0f) {}

ActivationMatrix::ActivationMatrix(LayerId layer, std::size_t rows, std::size_t cols, std::vector<float> values)
    : layer_(layer), rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) {
        throw ContractViolation("activation matrix expects " + std::to_string(rows * cols) + " values, got " +
                                std::to_string(values_.size()));
    }
}

void InferenceLedger::record_batch(std::size_t inputs, std::size_t depth) noexcept {
    inputsRun_.fetch_add(inputs, std::memory_order_relaxed);
    batchesRun_.fetch_add(1, std::memory_order_relaxed);
    unitCost_.fetch_add(static_cast<std::uint64_t>(inputs) * depth, std::memory_order_relaxed);
}

LedgerSnapshot InferenceLedger::snapshot() const noexcept {
    return {inputsRun_.load(std::memory_order_relaxed), batchesRun_.load(std::memory_order_relaxed),
            unitCost_.load(std::memory_order_relaxed)};
}

std::size_t ActivationSource::layer_depth(LayerId layer) const {
    check_layer(layer);
    return static_cast<std::size_t>(layer.index) + 1;
}

void ActivationSource::check_layer(LayerId layer) const {
    if (layer.index >= layer_count()) {
        throw LayerOutOfRange("layer " + std::to_string(layer.index) + " out of range (model has " +
                              std::to_string(layer_count()) + " layers)");
    }
}

namespace {

void check_inputs(std::span<const InputId> inputs, std::size_t nInputs) {
    for (InputId id : inputs) {
        if (id >= nInputs) {
            throw IndexOutOfRange("input " + std::to_string(id) + " out of range (dataset has " +
                                  std::to_string(nInputs) + " inputs)");
        }
    }
}

} // namespace

ActivationMatrix ActivationSource::infer_layer(LayerId layer, std::span<const InputId> inputs, std::size_t batchSize,
                                               InferenceLedger& ledger) const {
    LayerId one[] = {layer};
    return std::move(infer_layers(one, inputs, batchSize, ledger).front());
}

std::vector<ActivationMatrix> ActivationSource::infer_layers(std::span<const LayerId> layers,
                                                             std::span<const InputId> inputs, std::size_t batchSize,
                                                             InferenceLedger& ledger) const {
    if (batchSize == 0) {
        throw ContractViolation("batchSize must be >= 1");
    }
    std::size_t depth = 0;
    for (LayerId l : layers) {
        depth = std::max(depth, layer_depth(l));
    }
    check_inputs(inputs, input_count());

    std::vector<ActivationMatrix> out;
    out.reserve(layers.size());
    for (LayerId l : layers) {
        out.emplace_back(l, inputs.size(), layer_width(l));
    }
    for (std::size_t begin = 0; begin < inputs.size(); begin += batchSize) {
        const std::size_t n = std::min(batchSize, inputs.size() - begin);
        auto batch = inputs.subspan(begin, n);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            compute_rows(layers[i], batch, out[i], begin);
        }
        ledger.record_batch(n, depth);
    }
    return out;
}

ActivationMatrix ActivationSource::peek_layer(LayerId layer) const {
    check_layer(layer);
    std::vector<InputId> all(input_count());
    std::iota(all.begin(), all.end(), InputId{0});
    ActivationMatrix m(layer, all.size(), layer_width(layer));
    compute_rows(layer, all, m, 0);
    return m;
}

MatrixSource::MatrixSource(std::vector<ActivationMatrix> layers) : layers_(std::move(layers)) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].layer().index != l) {
            throw ContractViolation("layer " + std::to_string(l) + " stored out of order");
        }
        if (layers_[l].rows() != layers_.front().rows()) {
            throw ContractViolation("all layers must cover the same inputs");
        }
        for (float v : layers_[l].values()) {
            if (!std::isfinite(v)) {
                throw ContractViolation("activations must be finite");
            }
        }
    }
}

std::size_t MatrixSource::layer_width(LayerId layer) const {
    check_layer(layer);
    return layers_[layer.index].cols();
}

void MatrixSource::compute_rows(LayerId layer, std::span<const InputId> inputs, ActivationMatrix& out,
                                std::size_t firstRow) const {
    const ActivationMatrix& full = layers_[layer.index];
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        std::ranges::copy(full.row(inputs[j]), out.row(firstRow + j).begin());
    }
}

} // namespace everest
