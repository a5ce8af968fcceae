#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace everest {

// Monotone aggregate over per-neuron non-negative components.
// Cosine distance is supported by normalizing activations and using l2.
class DistanceFn {
public:
    enum class Kind { l1, l2, linf, weighted_l2 };

    DistanceFn() = default;
    static DistanceFn l1() { return DistanceFn(Kind::l1); }
    static DistanceFn l2() { return DistanceFn(Kind::l2); }
    static DistanceFn linf() { return DistanceFn(Kind::linf); }
    static DistanceFn weighted_l2(std::vector<float> weights);

    // "l1" | "l2" | "linf" | "wl2:<comma-separated weights>"
    static DistanceFn parse(std::string_view name);
    std::string name() const;

    Kind kind() const noexcept { return kind_; }
    const std::vector<float>& weights() const noexcept { return weights_; }

    // Components must be >= 0 (+inf allowed). A zero-weight component is
    // ignored even when infinite.
    double aggregate(std::span<const double> components) const;

    friend bool operator==(const DistanceFn&, const DistanceFn&) = default;

private:
    explicit DistanceFn(Kind k) : kind_(k) {}

    Kind kind_ = Kind::l2;
    std::vector<float> weights_;
};

enum class QueryMode { most_similar, highest };

QueryMode parse_mode(std::string_view s);
std::string_view to_string(QueryMode m);

// DIST over |x_i - s_i|.
double similarity_distance(const DistanceFn& fn, std::span<const float> x, std::span<const float> s);

// DIST over max(x_i, 0): the highest-mode score.
double activation_score(const DistanceFn& fn, std::span<const float> x);

} // namespace everest
