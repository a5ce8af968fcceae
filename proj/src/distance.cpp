#include "everest/distance.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

namespace everest {

DistanceFn DistanceFn::weighted_l2(std::vector<float> weights) {
    for (float w : weights) {
        if (!(w >= 0.0f) || !std::isfinite(w)) {
            throw ContractViolation("weighted_l2 weights must be finite and non-negative");
        }
    }
    DistanceFn fn(Kind::weighted_l2);
    fn.weights_ = std::move(weights);
    return fn;
}

DistanceFn DistanceFn::parse(std::string_view name) {
    if (name == "l1") return l1();
    if (name == "l2") return l2();
    if (name == "linf") return linf();
    if (name.starts_with("wl2:")) {
        std::vector<float> weights;
        std::string_view rest = name.substr(4);
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            std::string token(rest.substr(0, comma));
            try {
                std::size_t used = 0;
                weights.push_back(std::stof(token, &used));
                if (used != token.size()) throw std::invalid_argument(token);
            } catch (const std::exception&) {
                throw InvalidQuery("bad weight '" + token + "' in distance '" + std::string(name) + "'");
            }
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
        }
        if (weights.empty()) {
            throw InvalidQuery("wl2 needs at least one weight");
        }
        return weighted_l2(std::move(weights));
    }
    throw InvalidQuery("unknown distance '" + std::string(name) + "'");
}

std::string DistanceFn::name() const {
    switch (kind_) {
    case Kind::l1: return "l1";
    case Kind::l2: return "l2";
    case Kind::linf: return "linf";
    case Kind::weighted_l2: {
        std::ostringstream os;
        os << "wl2:";
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            os << (i ? "," : "") << weights_[i];
        }
        return os.str();
    }
    }
    return "l2";
}

double DistanceFn::aggregate(std::span<const double> components) const {
    if (kind_ == Kind::weighted_l2 && components.size() != weights_.size()) {
        throw ContractViolation("weighted_l2 expects " + std::to_string(weights_.size()) + " components, got " +
                                std::to_string(components.size()));
    }
    for (double c : components) {
        if (!(c >= 0.0)) {
            throw ContractViolation("distance components must be non-negative absolute differences");
        }
    }
    switch (kind_) {
    case Kind::l1: {
        double sum = 0.0;
        for (double c : components) sum += c;
        return sum;
    }
    case Kind::l2: {
        double sum = 0.0;
        for (double c : components) sum += c * c;
        return std::sqrt(sum);
    }
    case Kind::linf: {
        double m = 0.0;
        for (double c : components) m = std::max(m, c);
        return m;
    }
    case Kind::weighted_l2: {
        double sum = 0.0;
        for (std::size_t i = 0; i < components.size(); ++i) {
            if (weights_[i] == 0.0f) continue;
            sum += static_cast<double>(weights_[i]) * components[i] * components[i];
        }
        return std::sqrt(sum);
    }
    }
    return 0.0;
}

QueryMode parse_mode(std::string_view s) {
    if (s == "similar" || s == "most_similar") return QueryMode::most_similar;
    if (s == "highest") return QueryMode::highest;
    throw InvalidQuery("unknown query mode '" + std::string(s) + "'");
}

std::string_view to_string(QueryMode m) {
    return m == QueryMode::highest ? "highest" : "similar";
}

double similarity_distance(const DistanceFn& fn, std::span<const float> x, std::span<const float> s) {
    std::vector<double> diff(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        diff[i] = std::fabs(static_cast<double>(x[i]) - static_cast<double>(s[i]));
    }
    return fn.aggregate(diff);
}

double activation_score(const DistanceFn& fn, std::span<const float> x) {
    std::vector<double> clamped(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        clamped[i] = std::max(static_cast<double>(x[i]), 0.0);
    }
    return fn.aggregate(clamped);
}

} // namespace everest
