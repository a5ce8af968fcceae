#include "everest/workloads.hpp"

#include "everest/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <set>

namespace everest {

WorkloadKind parse_workload(std::string_view s) {
    if (s == "w1") return WorkloadKind::w1;
    if (s == "w2") return WorkloadKind::w2;
    if (s == "w3") return WorkloadKind::w3;
    if (s == "iqa" || s == "iqa_seq") return WorkloadKind::iqa_seq;
    throw ConfigError("unknown workload '" + std::string(s) + "'");
}

std::string_view to_string(WorkloadKind k) {
    switch (k) {
    case WorkloadKind::w1: return "w1";
    case WorkloadKind::w2: return "w2";
    case WorkloadKind::w3: return "w3";
    case WorkloadKind::iqa_seq: return "iqa_seq";
    }
    return "w1";
}

TransitionProbabilities transition_probabilities(WorkloadKind kind) {
    switch (kind) {
    case WorkloadKind::w1: return {0.5, 0.3, 0.2};
    case WorkloadKind::w2: return {0.5, 0.4, 0.1};
    default: return {};
    }
}

namespace {

// Neurons by (activation desc, id asc).
std::vector<NeuronId> strongest_first(std::span<const float> row) {
    std::vector<NeuronId> order(row.size());
    for (NeuronId n = 0; n < row.size(); ++n) order[n] = n;
    std::ranges::stable_sort(order, [&](NeuronId a, NeuronId b) { return row[a] > row[b]; });
    return order;
}

std::vector<float> target_row(const ActivationSource& source, LayerId layer, InputId target, InferenceLedger& ledger) {
    const InputId ids[] = {target};
    const ActivationMatrix m = source.infer_layer(layer, ids, 1, ledger);
    return {m.row(0).begin(), m.row(0).end()};
}

// Draws a neuron from `pool` that is not in `taken`, falling back to the
// strongest neuron not taken.
NeuronId draw_new(const std::vector<NeuronId>& pool, const std::vector<NeuronId>& strongest,
                  const std::set<NeuronId>& taken, XorShift64Star& rng) {
    std::vector<NeuronId> free;
    for (NeuronId n : pool) {
        if (!taken.contains(n)) free.push_back(n);
    }
    if (!free.empty()) return free[rng.next_below(free.size())];
    for (NeuronId n : strongest) {
        if (!taken.contains(n)) return n;
    }
    throw ConfigError("layer has fewer neurons than the requested group size");
}

} // namespace

std::vector<NeuronId> rand_high_pool(std::span<const float> row) {
    std::vector<NeuronId> order = strongest_first(row);
    std::size_t positive = 0;
    while (positive < order.size() && row[order[positive]] > 0.0f) ++positive;
    order.resize((positive + 1) / 2);
    return order;
}

std::vector<NeuronId> pick_group(GroupKind kind, std::span<const float> row, std::size_t size, XorShift64Star& rng) {
    if (size == 0 || size > row.size()) {
        throw ConfigError("group size " + std::to_string(size) + " does not fit a layer of width " +
                          std::to_string(row.size()));
    }
    const std::vector<NeuronId> strongest = strongest_first(row);
    if (kind == GroupKind::top) {
        return {strongest.begin(), strongest.begin() + static_cast<std::ptrdiff_t>(size)};
    }
    const std::vector<NeuronId> pool = rand_high_pool(row);
    std::vector<NeuronId> group;
    std::set<NeuronId> taken;
    while (group.size() < size) {
        const NeuronId n = draw_new(pool, strongest, taken, rng);
        taken.insert(n);
        group.push_back(n);
    }
    return group;
}

QuerySpec make_query(const ActivationSource& source, LayerId layer, GroupKind kind, std::size_t groupSize,
                     std::size_t k, XorShift64Star& rng, InferenceLedger& generationLedger) {
    QuerySpec q;
    q.layer = layer;
    q.target = static_cast<InputId>(rng.next_below(source.input_count()));
    q.k = k;
    q.group = pick_group(kind, target_row(source, layer, q.target, generationLedger), groupSize, rng);
    return q;
}

std::vector<QuerySpec> generate_workload(const WorkloadSpec& spec, const ActivationSource& source,
                                         InferenceLedger& generationLedger) {
    const std::size_t nLayers = source.layer_count();
    if (nLayers == 0 || source.input_count() == 0) {
        throw ConfigError("workloads need a non-empty source");
    }
    if (spec.kind == WorkloadKind::iqa_seq && (spec.nReplace > spec.nSize || spec.nSize == 0)) {
        throw ConfigError("iqa sequences need 0 < nSize and nReplace <= nSize");
    }
    XorShift64Star rng(spec.seed);
    std::vector<QuerySpec> out;
    out.reserve(spec.queries);

    if (spec.kind == WorkloadKind::iqa_seq) {
        const LayerId layer(static_cast<std::uint32_t>(rng.next_below(nLayers)));
        const InputId target = static_cast<InputId>(rng.next_below(source.input_count()));
        const std::vector<float> row = target_row(source, layer, target, generationLedger);
        const std::vector<NeuronId> pool = rand_high_pool(row);
        const std::vector<NeuronId> strongest = strongest_first(row);
        std::vector<NeuronId> group = pick_group(GroupKind::rand_high, row, spec.nSize, rng);
        for (std::size_t q = 0; q < spec.queries; ++q) {
            if (q > 0) {
                // Replace nReplace distinct slots with neurons outside the group.
                std::vector<std::size_t> slots(group.size());
                for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
                for (std::size_t r = 0; r < spec.nReplace; ++r) {
                    const std::size_t j = r + rng.next_below(slots.size() - r);
                    std::swap(slots[r], slots[j]);
                }
                std::set<NeuronId> taken(group.begin(), group.end());
                for (std::size_t r = 0; r < spec.nReplace; ++r) {
                    const NeuronId n = draw_new(pool, strongest, taken, rng);
                    taken.insert(n);
                    group[slots[r]] = n;
                }
            }
            QuerySpec s;
            s.layer = layer;
            s.target = target;
            s.k = spec.k;
            s.group = group;
            s.distance = spec.distance;
            out.push_back(std::move(s));
        }
        return out;
    }

    const TransitionProbabilities p = transition_probabilities(spec.kind);
    std::vector<char> queried(nLayers, 0);
    std::uint32_t previous = 0;
    for (std::size_t q = 0; q < spec.queries; ++q) {
        std::uint32_t layer = 0;
        if (q == 0 || spec.kind == WorkloadKind::w3) {
            layer = static_cast<std::uint32_t>(rng.next_below(nLayers));
        } else {
            std::vector<std::uint32_t> prev;
            std::vector<std::uint32_t> fresh;
            for (std::uint32_t l = 0; l < nLayers; ++l) {
                if (!queried[l]) {
                    fresh.push_back(l);
                } else if (l != previous) {
                    prev.push_back(l);
                }
            }
            double pSame = p.pSame;
            double pPrev = p.pPrev;
            double pNew = p.pNew;
            if (fresh.empty()) {
                pPrev += pNew;
                pNew = 0.0;
            }
            if (prev.empty()) {
                pNew += pPrev;
                pPrev = 0.0;
            }
            if (fresh.empty() && prev.empty()) {
                pSame = 1.0;
            }
            const double u = rng.next_unit() * (pSame + pPrev + pNew);
            if (u < pSame) {
                layer = previous;
            } else if (u < pSame + pPrev) {
                layer = prev[rng.next_below(prev.size())];
            } else {
                layer = fresh[rng.next_below(fresh.size())];
            }
        }
        queried[layer] = 1;
        previous = layer;
        QuerySpec s = make_query(source, LayerId(layer), GroupKind::rand_high,
                                 std::min(spec.groupSize, source.layer_width(LayerId(layer))), spec.k, rng,
                                 generationLedger);
        s.distance = spec.distance;
        out.push_back(std::move(s));
    }
    return out;
}

std::uint64_t result_hash(const std::vector<ResultEntry>& entries) {
    std::vector<double> d;
    d.reserve(entries.size());
    for (const auto& e : entries) d.push_back(e.distance);
    std::ranges::sort(d);
    std::uint64_t h = 1469598103934665603ull;
    for (double v : d) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::vector<HarnessRow> run_harness(const std::vector<QuerySpec>& queries, std::span<Strategy* const> strategies) {
    std::vector<HarnessRow> rows;
    if (strategies.empty()) return rows;

    std::vector<InferenceLedger> ledgers(strategies.size());
    std::vector<LedgerSnapshot> last(strategies.size());
    std::vector<std::uint64_t> cumulative(strategies.size(), 0);
    for (std::size_t s = 0; s < strategies.size(); ++s) {
        strategies[s]->prepare(ledgers[s]);
    }
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t s = 0; s < strategies.size(); ++s) {
            const StrategyAnswer answer = strategies[s]->answer(queries[q], ledgers[s]);
            const LedgerSnapshot now = ledgers[s].snapshot();
            const LedgerSnapshot delta = now - last[s];
            last[s] = now;
            cumulative[s] += delta.unitCost;
            rows.push_back({q, strategies[s]->name(), delta.unitCost, delta.inputsRun, answer.bytesRead,
                            strategies[s]->bytes_stored(), cumulative[s], result_hash(answer.entries)});
        }
    }
    return rows;
}

void write_harness_csv(std::ostream& out, const std::vector<HarnessRow>& rows) {
    out << "queryIdx,strategy,inferenceUnits,bytesRead,bytesStored,cumulativeUnits,inputsRun,resultHash\n";
    for (const auto& r : rows) {
        out << r.queryIdx << ',' << r.strategy << ',' << r.inferenceUnits << ',' << r.bytesRead << ','
            << r.bytesStored << ',' << r.cumulativeUnits << ',' << r.inputsRun << ',' << r.resultHash << '\n';
    }
}

} // namespace everest
