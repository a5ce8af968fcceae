#pragma once

#include "everest/activation_source.hpp"

#include <cstdint>
#include <vector>

namespace everest {

// xorshift64* generator. Reproducible across languages: the constants and
// the [-1, 1] mapping are fixed.
class XorShift64Star {
public:
    explicit XorShift64Star(std::uint64_t seed);

    std::uint64_t next() noexcept;
    // Uniform in [0, 1) with 53 bits of precision.
    double next_unit() noexcept;
    // Uniform in [-1, 1).
    double next_signed() noexcept { return next_unit() * 2.0 - 1.0; }
    // Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) noexcept;

private:
    std::uint64_t state_;
};

enum class Nonlinearity { relu };

struct SyntheticModelSpec {
    std::uint64_t seed = 0;
    std::vector<std::size_t> layerWidths;
    std::size_t inputDim = 16;
    Nonlinearity nonlinearity = Nonlinearity::relu;
};

// Seeded dense ReLU network over seeded input vectors. Activations of every
// layer are materialized at construction; infer_layer still charges the
// ledger as if the forward pass ran.
class SyntheticModel final : public ActivationSource {
public:
    SyntheticModel(SyntheticModelSpec spec, std::size_t nInputs);

    std::size_t layer_count() const override { return spec_.layerWidths.size(); }
    std::size_t input_count() const override { return nInputs_; }
    std::size_t layer_width(LayerId layer) const override;

    const SyntheticModelSpec& spec() const noexcept { return spec_; }

    // Row-major [out][in] weights and the bias of layer l, already scaled.
    const std::vector<float>& weights(std::size_t l) const { return weights_.at(l); }
    const std::vector<float>& bias(std::size_t l) const { return biases_.at(l); }
    std::vector<float> input_vector(InputId x) const;

protected:
    void compute_rows(LayerId layer, std::span<const InputId> inputs, ActivationMatrix& out,
                      std::size_t firstRow) const override;

private:
    SyntheticModelSpec spec_;
    std::size_t nInputs_;
    std::vector<std::vector<float>> weights_;
    std::vector<std::vector<float>> biases_;
    std::vector<ActivationMatrix> layers_;
};

} // namespace everest
