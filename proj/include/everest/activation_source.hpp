#pragma once

#include "everest/types.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace everest {

// Dense per-layer activations. Row r holds the activations of one input,
// column n the activation of neuron n.
class ActivationMatrix {
public:
    ActivationMatrix() = default;
    ActivationMatrix(LayerId layer, std::size_t rows, std::size_t cols);
    ActivationMatrix(LayerId layer, std::size_t rows, std::size_t cols, std::vector<float> values);

    LayerId layer() const noexcept { return layer_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    float at(std::size_t row, std::size_t col) const { return values_[row * cols_ + col]; }
    float& at(std::size_t row, std::size_t col) { return values_[row * cols_ + col]; }

    std::span<const float> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }

    const std::vector<float>& values() const noexcept { return values_; }

    friend bool operator==(const ActivationMatrix&, const ActivationMatrix&) = default;

private:
    LayerId layer_{};
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

struct LedgerSnapshot {
    std::uint64_t inputsRun = 0;
    std::uint64_t batchesRun = 0;
    std::uint64_t unitCost = 0;

    LedgerSnapshot operator-(const LedgerSnapshot& o) const {
        return {inputsRun - o.inputsRun, batchesRun - o.batchesRun, unitCost - o.unitCost};
    }
    friend bool operator==(const LedgerSnapshot&, const LedgerSnapshot&) = default;
};

// Counts simulated forward passes. unitCost accumulates
// (inputs in batch) x (depth of the requested layer).
class InferenceLedger {
public:
    void record_batch(std::size_t inputs, std::size_t depth) noexcept;
    LedgerSnapshot snapshot() const noexcept;

private:
    std::atomic<std::uint64_t> inputsRun_{0};
    std::atomic<std::uint64_t> batchesRun_{0};
    std::atomic<std::uint64_t> unitCost_{0};
};

// Stand-in for DNN inference. Implementations are immutable after
// construction; every call is charged to the ledger passed in.
class ActivationSource {
public:
    virtual ~ActivationSource() = default;

    virtual std::size_t layer_count() const = 0;
    virtual std::size_t input_count() const = 0;
    virtual std::size_t layer_width(LayerId layer) const = 0;

    // Cost multiplier for inference up to `layer`: later layers cost more.
    std::size_t layer_depth(LayerId layer) const;

    // Activations of `layer` for `inputs` (row j <-> inputs[j]), computed in
    // ceil(|inputs| / batchSize) batches.
    ActivationMatrix infer_layer(LayerId layer, std::span<const InputId> inputs, std::size_t batchSize,
                                 InferenceLedger& ledger) const;

    // One forward pass serving several layers at once; charged at the depth of
    // the deepest requested layer.
    std::vector<ActivationMatrix> infer_layers(std::span<const LayerId> layers, std::span<const InputId> inputs,
                                               std::size_t batchSize, InferenceLedger& ledger) const;

    // Full activation matrix of a layer, uncharged. Used by oracles and tests.
    ActivationMatrix peek_layer(LayerId layer) const;

protected:
    // Write the activations of `inputs` into consecutive rows of `out`
    // starting at `firstRow`.
    virtual void compute_rows(LayerId layer, std::span<const InputId> inputs, ActivationMatrix& out,
                              std::size_t firstRow) const = 0;

    void check_layer(LayerId layer) const;
};

// Source backed by stored matrices (e.g. loaded from an ACTV file). Every
// layer must cover the same inputs.
class MatrixSource final : public ActivationSource {
public:
    explicit MatrixSource(std::vector<ActivationMatrix> layers);

    std::size_t layer_count() const override { return layers_.size(); }
    std::size_t input_count() const override { return layers_.empty() ? 0 : layers_.front().rows(); }
    std::size_t layer_width(LayerId layer) const override;

    const std::vector<ActivationMatrix>& layers() const noexcept { return layers_; }

protected:
    void compute_rows(LayerId layer, std::span<const InputId> inputs, ActivationMatrix& out,
                      std::size_t firstRow) const override;

private:
    std::vector<ActivationMatrix> layers_;
};

} // namespace everest
