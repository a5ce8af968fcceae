#include "everest/synthetic_model.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <cmath>

namespace everest {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kInputStream = 0x1D8E4E27C47D124FULL;

} // namespace

XorShift64Star::XorShift64Star(std::uint64_t seed) : state_(splitmix64(seed)) {
    if (state_ == 0) {
        state_ = 0x9E3779B97F4A7C15ULL;
    }
}

std::uint64_t XorShift64Star::next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
}

double XorShift64Star::next_unit() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::uint64_t XorShift64Star::next_below(std::uint64_t bound) noexcept {
    return bound == 0 ? 0 : next() % bound;
}

SyntheticModel::SyntheticModel(SyntheticModelSpec spec, std::size_t nInputs)
    : spec_(std::move(spec)), nInputs_(nInputs) {
    if (spec_.layerWidths.empty()) {
        throw ConfigError("synthetic model needs at least one layer");
    }
    if (spec_.inputDim == 0 || std::ranges::any_of(spec_.layerWidths, [](std::size_t w) { return w == 0; })) {
        throw ConfigError("synthetic model widths must be >= 1");
    }

    XorShift64Star rng(spec_.seed);
    std::size_t fanIn = spec_.inputDim;
    for (std::size_t width : spec_.layerWidths) {
        // He-style scaling keeps activation magnitudes stable with depth.
        const double scale = std::sqrt(6.0 / static_cast<double>(fanIn));
        std::vector<float> w(width * fanIn);
        for (float& v : w) {
            v = static_cast<float>(rng.next_signed() * scale);
        }
        std::vector<float> b(width);
        for (float& v : b) {
            v = static_cast<float>(rng.next_signed() * 0.1);
        }
        weights_.push_back(std::move(w));
        biases_.push_back(std::move(b));
        fanIn = width;
    }

    std::vector<float> prev;
    for (std::size_t l = 0; l < spec_.layerWidths.size(); ++l) {
        layers_.emplace_back(LayerId(static_cast<std::uint32_t>(l)), nInputs_, spec_.layerWidths[l]);
    }
    for (InputId x = 0; x < nInputs_; ++x) {
        prev = input_vector(x);
        for (std::size_t l = 0; l < spec_.layerWidths.size(); ++l) {
            const std::size_t width = spec_.layerWidths[l];
            const std::size_t in = prev.size();
            const auto& w = weights_[l];
            auto row = layers_[l].row(x);
            for (std::size_t o = 0; o < width; ++o) {
                double acc = biases_[l][o];
                for (std::size_t i = 0; i < in; ++i) {
                    acc += static_cast<double>(w[o * in + i]) * prev[i];
                }
                row[o] = static_cast<float>(std::max(acc, 0.0));
            }
            prev.assign(row.begin(), row.end());
        }
    }
}

std::vector<float> SyntheticModel::input_vector(InputId x) const {
    XorShift64Star rng(spec_.seed ^ splitmix64(kInputStream + x));
    std::vector<float> v(spec_.inputDim);
    for (float& f : v) {
        f = static_cast<float>(rng.next_unit());
    }
    return v;
}

std::size_t SyntheticModel::layer_width(LayerId layer) const {
    check_layer(layer);
    return spec_.layerWidths[layer.index];
}

void SyntheticModel::compute_rows(LayerId layer, std::span<const InputId> inputs, ActivationMatrix& out,
                                  std::size_t firstRow) const {
    const ActivationMatrix& full = layers_[layer.index];
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        auto src = full.row(inputs[j]);
        std::ranges::copy(src, out.row(firstRow + j).begin());
    }
}

} // namespace everest
