#include "everest/oracle.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace everest {

namespace {

bool highest(const QuerySpec& spec) {
    return spec.mode == QueryMode::highest;
}

std::vector<float> group_row(const ActivationMatrix& acts, InputId x, const std::vector<NeuronId>& group) {
    std::vector<float> out(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        out[i] = acts.at(x, group[i]);
    }
    return out;
}

double score_of(const QuerySpec& spec, const ActivationMatrix& acts, InputId x, const std::vector<float>& target) {
    const std::vector<float> row = group_row(acts, x, spec.group);
    return highest(spec) ? activation_score(spec.distance, row) : similarity_distance(spec.distance, row, target);
}

bool skip(const QuerySpec& spec, InputId x) {
    return !highest(spec) && !spec.includeTarget && x == spec.target;
}

// "a ranks before b"
bool better(const QuerySpec& spec, double a, double b) {
    return highest(spec) ? a > b : a < b;
}

class Ranked {
public:
    Ranked(const QuerySpec& spec, std::size_t k) : spec_(spec), k_(k) {}

    void offer(InputId x, double v) {
        if (k_ == 0) return;
        if (items_.size() < k_) {
            items_.push_back({x, v});
            return;
        }
        auto worst = std::ranges::max_element(items_, [&](const ResultEntry& a, const ResultEntry& b) {
            return better(spec_, a.distance, b.distance);
        });
        if (better(spec_, v, worst->distance)) {
            *worst = {x, v};
        }
    }

    bool full() const { return items_.size() == k_; }
    double worst() const {
        double w = items_.front().distance;
        for (const auto& e : items_) {
            if (better(spec_, w, e.distance)) w = e.distance;
        }
        return w;
    }

    std::vector<ResultEntry> sorted() const {
        std::vector<ResultEntry> out = items_;
        std::ranges::sort(out, [&](const ResultEntry& a, const ResultEntry& b) {
            if (a.distance != b.distance) return better(spec_, a.distance, b.distance);
            return a.input < b.input;
        });
        return out;
    }

private:
    const QuerySpec& spec_;
    std::size_t k_;
    std::vector<ResultEntry> items_;
};

std::size_t effective_k(const QuerySpec& spec, std::size_t nInputs) {
    const std::size_t candidates = (!highest(spec) && !spec.includeTarget) ? nInputs - 1 : nInputs;
    return std::min(spec.k, candidates);
}

} // namespace

std::vector<std::pair<InputId, double>> all_candidate_scores(const QuerySpec& spec, const ActivationMatrix& acts) {
    validate_query(spec, acts.rows(), acts.cols());
    const std::vector<float> target =
        highest(spec) ? std::vector<float>{} : group_row(acts, spec.target, spec.group);
    std::vector<std::pair<InputId, double>> out;
    out.reserve(acts.rows());
    for (InputId x = 0; x < acts.rows(); ++x) {
        if (skip(spec, x)) continue;
        out.emplace_back(x, score_of(spec, acts, x, target));
    }
    return out;
}

std::vector<ResultEntry> brute_force_topk(const QuerySpec& spec, const ActivationMatrix& acts) {
    Ranked top(spec, effective_k(spec, acts.rows()));
    for (const auto& [x, v] : all_candidate_scores(spec, acts)) {
        top.offer(x, v);
    }
    return top.sorted();
}

AbsDiffLists build_abs_diff_lists(const QuerySpec& spec, const ActivationMatrix& acts) {
    validate_query(spec, acts.rows(), acts.cols());
    AbsDiffLists out;
    out.lists.resize(spec.group.size());
    for (std::size_t i = 0; i < spec.group.size(); ++i) {
        const NeuronId g = spec.group[i];
        auto& list = out.lists[i];
        for (InputId x = 0; x < acts.rows(); ++x) {
            if (skip(spec, x)) continue;
            const double a = acts.at(x, g);
            const double v = highest(spec) ? std::max(a, 0.0)
                                           : std::fabs(a - static_cast<double>(acts.at(spec.target, g)));
            list.emplace_back(x, v);
        }
        std::ranges::sort(list, [&](const auto& a, const auto& b) {
            if (a.second != b.second) return better(spec, a.second, b.second);
            return a.first < b.first;
        });
    }
    return out;
}

CtaResult cta_reference(const QuerySpec& spec, const ActivationMatrix& acts, const AbsDiffLists& lists) {
    const std::size_t k = effective_k(spec, acts.rows());
    const std::vector<float> target =
        highest(spec) ? std::vector<float>{} : group_row(acts, spec.target, spec.group);
    const std::size_t m = lists.lists.size();
    const std::size_t length = m == 0 ? 0 : lists.lists.front().size();

    Ranked top(spec, k);
    std::unordered_set<InputId> seen;
    std::vector<double> last(m, 0.0);
    CtaResult out;
    out.depths.assign(m, 0);
    for (std::size_t depth = 1; depth <= length && k > 0; ++depth) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto& [x, v] = lists.lists[i][depth - 1];
            last[i] = v;
            out.depths[i] = depth;
            if (seen.insert(x).second) {
                top.offer(x, score_of(spec, acts, x, target));
            }
        }
        const double tau = spec.distance.aggregate(last);
        if (top.full() && (highest(spec) ? top.worst() >= tau : top.worst() <= tau)) {
            break;
        }
    }
    out.d = out.depths.empty() ? 0 : *std::ranges::max_element(out.depths);
    out.entries = top.sorted();
    return out;
}

OptimalityReport check_instance_optimality(const QueryStats& ntaStats, const CtaResult& cta, std::size_t R) {
    OptimalityReport report;
    report.d = cta.d;
    report.R = R;
    report.bound = cta.d + 2 * R;
    report.perNeuronAccessed = ntaStats.perNeuronDepth;
    report.maxExcess = -static_cast<long long>(report.bound);
    for (std::size_t accessed : report.perNeuronAccessed) {
        const long long excess = static_cast<long long>(accessed) - static_cast<long long>(report.bound);
        report.maxExcess = std::max(report.maxExcess, excess);
        if (accessed > report.bound) report.pass = false;
    }
    return report;
}

bool same_distance_multiset(const std::vector<ResultEntry>& a, const std::vector<ResultEntry>& b) {
    if (a.size() != b.size()) return false;
    std::vector<double> da;
    std::vector<double> db;
    for (const auto& e : a) da.push_back(e.distance);
    for (const auto& e : b) db.push_back(e.distance);
    std::ranges::sort(da);
    std::ranges::sort(db);
    return da == db;
}

std::size_t count_theta_violations(const QuerySpec& spec, const std::vector<ResultEntry>& returned,
                                   const ActivationMatrix& acts, double theta) {
    std::unordered_set<InputId> kept;
    for (const auto& e : returned) kept.insert(e.input);
    std::vector<double> excluded;
    for (const auto& [x, v] : all_candidate_scores(spec, acts)) {
        if (!kept.contains(x)) excluded.push_back(v);
    }
    std::size_t violations = 0;
    for (const auto& y : returned) {
        for (double z : excluded) {
            const bool ok = highest(spec) ? theta * z <= y.distance : theta * y.distance <= z;
            violations += ok ? 0 : 1;
        }
    }
    return violations;
}

} // namespace everest
