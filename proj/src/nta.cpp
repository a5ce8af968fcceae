#include "everest/nta.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

namespace everest {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Bounded max-heap on (key, discovery sequence). Lower keys are better; on
// equal keys the earlier-discovered input stays.
class TopK {
public:
    struct Item {
        double key;
        std::uint64_t seq;
        InputId input;
    };

    explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

    void offer(InputId input, double key) {
        if (k_ == 0) return;
        const Item item{key, seq_++, input};
        if (heap_.size() < k_) {
            heap_.push_back(item);
            std::ranges::push_heap(heap_, worse);
            return;
        }
        if (key < heap_.front().key) {
            std::ranges::pop_heap(heap_, worse);
            heap_.back() = item;
            std::ranges::push_heap(heap_, worse);
        }
    }

    std::size_t size() const noexcept { return heap_.size(); }
    bool full() const noexcept { return heap_.size() == k_; }
    double worst() const noexcept { return heap_.empty() ? kInf : heap_.front().key; }

    std::vector<Item> sorted() const {
        std::vector<Item> out = heap_;
        std::ranges::sort(out, worse);
        return out;
    }

private:
    static bool worse(const Item& a, const Item& b) noexcept {
        return a.key < b.key || (a.key == b.key && a.seq < b.seq);
    }

    std::size_t k_;
    std::uint64_t seq_ = 0;
    std::vector<Item> heap_;
};

class Execution {
public:
    Execution(const QuerySpec& spec, const ActivationSource& source, const NeuralPartitionIndex& idx,
              InferenceLedger& ledger, const ExecutionOptions& options)
        : spec_(spec), source_(source), idx_(idx), ledger_(ledger), opt_(options), n_(idx.input_count()),
          m_(spec.group.size()), nP_(idx.partition_count()), highest_(spec.mode == QueryMode::highest),
          top_(0) {}

    TopKResult run();

private:
    std::size_t candidate_count() const {
        return (!highest_ && !spec_.includeTarget) ? n_ - 1 : n_;
    }
    float act(InputId x, std::size_t i) const { return groupActs_[static_cast<std::size_t>(x) * m_ + i]; }

    void check_mai() const;
    void claim(InputId x) {
        seen_[x] = 1;
        ++seenCount_;
    }
    // Loads the group activations of claimed inputs and offers them to top.
    void fetch(const std::vector<InputId>& ids);
    double key_of(InputId x) const;

    bool all_seen() const noexcept { return seenCount_ == n_; }
    double confirm_bound(double t) const noexcept { return highest_ ? -t : t; }
    double halt_bound(double t) const noexcept {
        if (highest_) return spec_.theta ? -*spec_.theta * t : -t;
        return spec_.theta ? t / *spec_.theta : t;
    }
    std::optional<double> current_theta(double t) const;

    // Records the threshold, streams confirmed entries and reports whether
    // the query is done (halted or stopped).
    bool end_iteration(double t);

    void run_mai_similar();
    void run_mai_highest();
    void run_rounds();
    double round_threshold(std::size_t c) const;

    // MAI frontier helpers.
    void settle_similar(std::size_t i);
    double mai_lower_fallback(std::size_t i) const;
    void settle_highest(std::size_t i);

    const QuerySpec& spec_;
    const ActivationSource& source_;
    const NeuralPartitionIndex& idx_;
    InferenceLedger& ledger_;
    const ExecutionOptions& opt_;
    const std::size_t n_;
    const std::size_t m_;
    const std::uint32_t nP_;
    const bool highest_;

    const MaximumActivationIndex* mai_ = nullptr;
    std::vector<float> groupActs_;
    std::vector<char> seen_;
    std::size_t seenCount_ = 0;
    std::vector<float> target_;
    TopK top_;
    std::vector<char> emitted_;
    QueryStats stats_;
    bool done_ = false;

    // Partition traversal state per group neuron.
    std::vector<PartitionId> sPid_;
    std::vector<std::vector<double>> dPar_;
    std::vector<std::vector<PartitionId>> ord_;
    std::vector<double> minBoundary_;
    std::vector<double> maxBoundary_;
    std::vector<char> lastSeen_;  // partition nP-1 visited
    std::vector<char> firstSeen_; // partition 0 visited

    // MAI frontier state.
    std::vector<char> inMai_;
    std::vector<std::size_t> up_;   // next candidate above is entries[up_ - 1]
    std::vector<std::size_t> down_; // next candidate below is entries[down_ + 1]
    std::vector<std::size_t> next_; // highest mode: next unread entry
};

double Execution::key_of(InputId x) const {
    const std::span<const float> acts(groupActs_.data() + static_cast<std::size_t>(x) * m_, m_);
    if (highest_) {
        return -activation_score(spec_.distance, acts);
    }
    return similarity_distance(spec_.distance, acts, target_);
}

void Execution::fetch(const std::vector<InputId>& ids) {
    if (ids.empty()) return;
    const std::size_t width = source_.layer_width(spec_.layer);
    auto store = [&](InputId x, std::span<const float> row) {
        for (std::size_t i = 0; i < m_; ++i) {
            groupActs_[static_cast<std::size_t>(x) * m_ + i] = row[spec_.group[i]];
        }
    };

    std::vector<InputId> misses = ids;
    if (opt_.cache != nullptr) {
        auto found = opt_.cache->lookup(spec_.layer, ids);
        for (const auto& [x, row] : found.hits) {
            if (row.size() != width) {
                throw ContractViolation("cached row width does not match the layer");
            }
            store(x, row);
        }
        stats_.cacheHits += found.hits.size();
        misses = std::move(found.misses);
    }
    if (!misses.empty()) {
        ActivationMatrix rows = source_.infer_layer(spec_.layer, misses, opt_.batchSize, ledger_);
        for (std::size_t j = 0; j < misses.size(); ++j) {
            store(misses[j], rows.row(j));
            if (opt_.cache != nullptr) {
                opt_.cache->insert(spec_.layer, misses[j], rows.row(j));
            }
            stats_.inferred.push_back(misses[j]);
        }
        stats_.inputsRun += misses.size();
    }

    for (InputId x : ids) {
        if (x == spec_.target && !highest_) {
            if (spec_.includeTarget) top_.offer(x, 0.0);
            continue;
        }
        top_.offer(x, key_of(x));
    }
}

std::optional<double> Execution::current_theta(double t) const {
    if (!top_.full()) return 0.0;
    if (highest_) {
        const double kth = -top_.worst();
        if (kth >= t) return std::nullopt;
        return t > 0.0 ? kth / t : 0.0;
    }
    const double b = top_.worst();
    if (b <= t) return std::nullopt;
    return t / b;
}

bool Execution::end_iteration(double t) {
    stats_.thresholds.push_back(t);
    stats_.finalThreshold = t;
    const std::size_t iteration = stats_.thresholds.size();

    const bool halted = all_seen() || (top_.full() && top_.worst() <= halt_bound(t));

    if (opt_.onPartial) {
        PartialResult partial;
        partial.threshold = t;
        partial.iteration = iteration;
        const double bound = confirm_bound(t);
        for (const auto& item : top_.sorted()) {
            if (emitted_[item.input]) continue;
            if (!halted && item.key > bound) break;
            emitted_[item.input] = 1;
            partial.entries.push_back({item.input, highest_ ? -item.key : item.key});
        }
        partial.theta = halted ? std::nullopt : current_theta(t);
        opt_.onPartial(partial);
    }

    if (halted) {
        if (!all_seen()) {
            stats_.thetaAchieved = current_theta(t);
        }
        return true;
    }
    const bool stopRequested = opt_.stop != nullptr && opt_.stop->load();
    const bool budgetHit = opt_.stopAfterIterations && iteration >= *opt_.stopAfterIterations;
    if (stopRequested || budgetHit) {
        stats_.stoppedEarly = true;
        stats_.thetaAchieved = current_theta(t);
        return true;
    }
    return false;
}

void Execution::check_mai() const {
    if (mai_->layer() != idx_.layer() || mai_->neuron_count() != idx_.neuron_count()) {
        throw ConfigError("MAI does not belong to the indexed layer");
    }
    for (NeuronId g : spec_.group) {
        if (idx_.partition_size(g, PartitionId(0)) != mai_->entry_count()) {
            throw ConfigError("NPI partition 0 of neuron " + std::to_string(g) +
                              " does not coincide with its MAI list; build the NPI with the MAI size");
        }
    }
}

double Execution::mai_lower_fallback(std::size_t i) const {
    // Inputs outside MAI(g) lie at or below the top of the first non-empty
    // partition after it.
    const NeuronId g = spec_.group[i];
    for (std::uint32_t p = 1; p < nP_; ++p) {
        if (idx_.partition_size(g, PartitionId(p)) == 0) continue;
        return std::max(0.0, static_cast<double>(target_[i]) - idx_.bounds(g, PartitionId(p)).second);
    }
    return kInf;
}

void Execution::settle_similar(std::size_t i) {
    const auto list = mai_->entries(spec_.group[i]);
    while (up_[i] > 0 && seen_[list[up_[i] - 1].input]) {
        --up_[i];
        ++stats_.perNeuronDepth[i];
    }
    while (down_[i] + 1 < list.size() && seen_[list[down_[i] + 1].input]) {
        ++down_[i];
        ++stats_.perNeuronDepth[i];
    }
}

void Execution::run_mai_similar() {
    inMai_.assign(m_, 0);
    up_.assign(m_, 0);
    down_.assign(m_, 0);
    std::vector<double> lowerFallback(m_, kInf);
    bool any = false;
    for (std::size_t i = 0; i < m_; ++i) {
        if (auto pos = mai_->position(spec_.group[i], spec_.target)) {
            inMai_[i] = 1;
            up_[i] = *pos;
            down_[i] = *pos;
            stats_.perNeuronDepth[i] = 1;
            lowerFallback[i] = mai_lower_fallback(i);
            any = true;
        }
    }
    if (!any) return;

    std::vector<double> minDist(m_);
    while (true) {
        std::vector<InputId> batch;
        while (batch.size() < opt_.batchSize) {
            std::size_t bestNeuron = m_;
            bool bestUp = false;
            double bestDiff = kInf;
            for (std::size_t i = 0; i < m_; ++i) {
                if (!inMai_[i]) continue;
                settle_similar(i);
                const auto list = mai_->entries(spec_.group[i]);
                const double a = target_[i];
                if (up_[i] > 0) {
                    const double d = static_cast<double>(list[up_[i] - 1].activation) - a;
                    if (d < bestDiff) {
                        bestDiff = d;
                        bestNeuron = i;
                        bestUp = true;
                    }
                }
                if (down_[i] + 1 < list.size()) {
                    const double d = a - static_cast<double>(list[down_[i] + 1].activation);
                    if (d < bestDiff) {
                        bestDiff = d;
                        bestNeuron = i;
                        bestUp = false;
                    }
                }
            }
            if (bestNeuron == m_) break;
            const auto list = mai_->entries(spec_.group[bestNeuron]);
            const InputId x = bestUp ? list[--up_[bestNeuron]].input : list[++down_[bestNeuron]].input;
            ++stats_.perNeuronDepth[bestNeuron];
            claim(x);
            batch.push_back(x);
        }
        if (batch.empty()) return;
        fetch(batch);
        ++stats_.maiSteps;

        for (std::size_t i = 0; i < m_; ++i) {
            if (!inMai_[i]) {
                minDist[i] = 0.0;
                continue;
            }
            settle_similar(i);
            const auto list = mai_->entries(spec_.group[i]);
            const double a = target_[i];
            const double above = up_[i] > 0 ? static_cast<double>(list[up_[i] - 1].activation) - a : kInf;
            const double below =
                down_[i] + 1 < list.size() ? a - static_cast<double>(list[down_[i] + 1].activation) : lowerFallback[i];
            minDist[i] = std::max(0.0, std::min(above, below));
        }
        if (end_iteration(spec_.distance.aggregate(minDist))) {
            done_ = true;
            return;
        }
    }
}

void Execution::settle_highest(std::size_t i) {
    const auto list = mai_->entries(spec_.group[i]);
    while (next_[i] < list.size() && seen_[list[next_[i]].input]) {
        ++next_[i];
        ++stats_.perNeuronDepth[i];
    }
}

void Execution::run_mai_highest() {
    next_.assign(m_, 0);
    std::vector<double> below(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
        const NeuronId g = spec_.group[i];
        for (std::uint32_t p = 1; p < nP_; ++p) {
            if (idx_.partition_size(g, PartitionId(p)) == 0) continue;
            below[i] = std::max(0.0, static_cast<double>(idx_.bounds(g, PartitionId(p)).second));
            break;
        }
    }
    std::vector<double> bound(m_);
    while (true) {
        std::vector<InputId> batch;
        while (batch.size() < opt_.batchSize) {
            std::size_t best = m_;
            float bestAct = 0.0f;
            for (std::size_t i = 0; i < m_; ++i) {
                settle_highest(i);
                const auto list = mai_->entries(spec_.group[i]);
                if (next_[i] >= list.size()) continue;
                if (best == m_ || list[next_[i]].activation > bestAct) {
                    best = i;
                    bestAct = list[next_[i]].activation;
                }
            }
            if (best == m_) break;
            const InputId x = mai_->entries(spec_.group[best])[next_[best]++].input;
            ++stats_.perNeuronDepth[best];
            claim(x);
            batch.push_back(x);
        }
        if (batch.empty()) return;
        fetch(batch);
        ++stats_.maiSteps;

        for (std::size_t i = 0; i < m_; ++i) {
            settle_highest(i);
            const auto list = mai_->entries(spec_.group[i]);
            bound[i] = next_[i] < list.size() ? std::max(0.0, static_cast<double>(list[next_[i]].activation))
                                              : below[i];
        }
        if (end_iteration(spec_.distance.aggregate(bound))) {
            done_ = true;
            return;
        }
    }
}

double Execution::round_threshold(std::size_t c) const {
    std::vector<double> comp(m_);
    for (std::size_t i = 0; i < m_; ++i) {
        const NeuronId g = spec_.group[i];
        if (highest_) {
            comp[i] = c + 1 < nP_
                          ? std::max(0.0, static_cast<double>(idx_.bounds(g, PartitionId(c + 1)).second))
                          : 0.0;
            continue;
        }
        if (opt_.rule == ThresholdRule::partition_bound) {
            comp[i] = c + 1 < nP_ ? dPar_[i][ord_[i][c + 1].value] : kInf;
            continue;
        }
        const double a = target_[i];
        const double low = lastSeen_[i] ? kInf : std::fabs(minBoundary_[i] - a);
        const double high = firstSeen_[i] ? kInf : std::fabs(maxBoundary_[i] - a);
        comp[i] = std::min(low, high);
    }
    return spec_.distance.aggregate(comp);
}

void Execution::run_rounds() {
    for (std::uint32_t c = 0; c < nP_; ++c) {
        std::vector<InputId> batch;
        for (std::size_t i = 0; i < m_; ++i) {
            const NeuronId g = spec_.group[i];
            const PartitionId p = ord_[i][c];
            const std::vector<InputId> members = idx_.get_input_ids(g, p);
            if (mai_ != nullptr && p.value == 0) {
                // Partition 0 may already have been walked through MAI.
                stats_.perNeuronDepth[i] = std::max(stats_.perNeuronDepth[i], members.size());
            } else {
                stats_.perNeuronDepth[i] += members.size();
            }
            for (InputId x : members) {
                if (seen_[x]) continue;
                claim(x);
                batch.push_back(x);
            }
            if (p.value + 1 == nP_) lastSeen_[i] = 1;
            if (p.value == 0) firstSeen_[i] = 1;
            // Members' activations span exactly the partition bounds.
            if (!members.empty()) {
                const auto [lo, hi] = idx_.bounds(g, p);
                minBoundary_[i] = std::min(minBoundary_[i], static_cast<double>(lo));
                maxBoundary_[i] = std::max(maxBoundary_[i], static_cast<double>(hi));
            }
        }
        fetch(batch);
        stats_.roundsExecuted = c + 1;
        if (end_iteration(round_threshold(c))) {
            done_ = true;
            return;
        }
    }
}

TopKResult Execution::run() {
    validate_query(spec_, n_, idx_.neuron_count());
    if (idx_.input_count() != source_.input_count() || idx_.neuron_count() != source_.layer_width(spec_.layer) ||
        idx_.layer() != spec_.layer) {
        throw ConfigError("NPI does not match the queried layer");
    }
    if (opt_.batchSize == 0) {
        throw ContractViolation("batchSize must be >= 1");
    }
    if (opt_.mai != nullptr && !opt_.mai->empty()) {
        mai_ = opt_.mai;
        check_mai();
    }

    const std::size_t candidates = candidate_count();
    const std::size_t k = std::min(spec_.k, candidates);
    stats_.truncated = spec_.k > candidates;
    top_ = TopK(k);
    groupActs_.assign(n_ * m_, 0.0f);
    seen_.assign(n_, 0);
    emitted_.assign(n_, 0);
    target_.assign(m_, 0.0f);
    stats_.perNeuronDepth.assign(m_, 0);
    stats_.indexBytesRead = m_ * (idx_.row_bytes() + static_cast<std::size_t>(nP_) * 2 * sizeof(float));
    if (mai_ != nullptr) {
        stats_.indexBytesRead += m_ * mai_->entry_count() * 8;
    }

    if (!highest_) {
        claim(spec_.target);
        fetch({spec_.target});
        for (std::size_t i = 0; i < m_; ++i) target_[i] = act(spec_.target, i);
    }

    sPid_.resize(m_);
    dPar_.resize(m_);
    ord_.resize(m_);
    minBoundary_.assign(m_, kInf);
    maxBoundary_.assign(m_, -kInf);
    lastSeen_.assign(m_, 0);
    firstSeen_.assign(m_, 0);
    for (std::size_t i = 0; i < m_; ++i) {
        const NeuronId g = spec_.group[i];
        if (highest_) {
            ord_[i].resize(nP_);
            for (std::uint32_t p = 0; p < nP_; ++p) ord_[i][p] = PartitionId(p);
            continue;
        }
        sPid_[i] = idx_.get_pid(g, spec_.target);
        dPar_[i] = compute_dpar(idx_, g, sPid_[i], target_[i]);
        ord_[i] = order_partitions(dPar_[i], sPid_[i]);
    }

    if (k > 0 && !all_seen()) {
        if (mai_ != nullptr) {
            if (highest_) {
                run_mai_highest();
            } else {
                run_mai_similar();
            }
        }
        if (!done_) run_rounds();
    }
    stats_.exhausted = all_seen();
    stats_.inputsSeen = seenCount_;

    TopKResult result;
    for (const auto& item : top_.sorted()) {
        result.entries.push_back({item.input, highest_ ? -item.key : item.key});
    }
    result.stats = std::move(stats_);
    return result;
}

} // namespace

void validate_query(const QuerySpec& spec, std::size_t nInputs, std::size_t width) {
    if (spec.group.empty()) {
        throw InvalidQuery("neuron group must not be empty");
    }
    std::unordered_set<NeuronId> distinct;
    for (NeuronId g : spec.group) {
        if (g >= width) {
            throw InvalidQuery("neuron " + std::to_string(g) + " out of range (layer width " +
                               std::to_string(width) + ")");
        }
        if (!distinct.insert(g).second) {
            throw InvalidQuery("neuron " + std::to_string(g) + " appears twice in the group");
        }
    }
    if (spec.k == 0) {
        throw InvalidQuery("k must be >= 1");
    }
    if (spec.mode == QueryMode::most_similar && spec.target >= nInputs) {
        throw InvalidQuery("target " + std::to_string(spec.target) + " out of range (dataset has " +
                           std::to_string(nInputs) + " inputs)");
    }
    if (spec.theta && !(*spec.theta > 0.0 && *spec.theta <= 1.0)) {
        throw InvalidQuery("theta must be in (0, 1]");
    }
    if (spec.distance.kind() == DistanceFn::Kind::weighted_l2 && spec.distance.weights().size() != spec.group.size()) {
        throw InvalidQuery("wl2 needs one weight per group neuron");
    }
}

std::vector<double> compute_dpar(const NeuralPartitionIndex& idx, NeuronId neuron, PartitionId targetPid,
                                 float targetAct) {
    std::vector<double> dPar(idx.partition_count(), 0.0);
    const double a = targetAct;
    for (std::uint32_t p = 0; p < idx.partition_count(); ++p) {
        const auto [lo, hi] = idx.bounds(neuron, PartitionId(p));
        if (p < targetPid.value) {
            dPar[p] = std::max(0.0, static_cast<double>(lo) - a);
        } else if (p > targetPid.value) {
            dPar[p] = std::max(0.0, a - static_cast<double>(hi));
        }
    }
    return dPar;
}

std::vector<PartitionId> order_partitions(std::span<const double> dPar, PartitionId targetPid) {
    std::vector<PartitionId> order(dPar.size());
    for (std::uint32_t p = 0; p < dPar.size(); ++p) order[p] = PartitionId(p);
    auto gap = [&](PartitionId p) {
        return p.value > targetPid.value ? p.value - targetPid.value : targetPid.value - p.value;
    };
    std::ranges::sort(order, [&](PartitionId a, PartitionId b) {
        if (dPar[a.value] != dPar[b.value]) return dPar[a.value] < dPar[b.value];
        if (gap(a) != gap(b)) return gap(a) < gap(b);
        return a < b;
    });
    return order;
}

TopKResult execute(const QuerySpec& spec, const ActivationSource& source, const NeuralPartitionIndex& idx,
                   InferenceLedger& ledger, const ExecutionOptions& options) {
    return Execution(spec, source, idx, ledger, options).run();
}

} // namespace everest
