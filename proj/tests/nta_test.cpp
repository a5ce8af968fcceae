#include "everest/errors.hpp"
#include "everest/iqa_cache.hpp"
#include "everest/nta.hpp"
#include "everest/oracle.hpp"
#include "everest/synthetic_model.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <limits>
#include <set>

using namespace everest;
using everest::testing::example_matrix;
using everest::testing::example_source;
using everest::testing::random_matrix;

namespace {

NeuralPartitionIndex example_index() {
    return build_npi(example_matrix(), 3, NpiBuildOptions{.allowNonPowerOfTwo = true});
}

QuerySpec example_query(bool includeTarget) {
    QuerySpec q;
    q.target = 5;
    q.group = {0, 1, 2};
    q.k = 2;
    q.distance = DistanceFn::l1();
    q.includeTarget = includeTarget;
    return q;
}

std::vector<InputId> ids_of(const std::vector<ResultEntry>& entries) {
    std::vector<InputId> out;
    for (const auto& e : entries) out.push_back(e.input);
    return out;
}

struct RandomCase {
    ActivationMatrix acts;
    QuerySpec spec;
    std::uint32_t nPartitions = 0;
};

RandomCase random_case(XorShift64Star& rng, std::uint64_t seed) {
    RandomCase c;
    const std::size_t n = 8 + rng.next_below(120);
    const std::size_t width = 1 + rng.next_below(8);
    c.acts = random_matrix(n, width, seed, -0.5f, 2.0f, rng.next_below(3) == 0 ? 6 : 0);
    c.nPartitions = 1u << rng.next_below(5);
    while (c.nPartitions > n) c.nPartitions >>= 1;
    const std::size_t g = 1 + rng.next_below(width);
    std::vector<NeuronId> all(width);
    for (NeuronId i = 0; i < width; ++i) all[i] = i;
    for (std::size_t i = 0; i < g; ++i) std::swap(all[i], all[i + rng.next_below(width - i)]);
    c.spec.group.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(g));
    c.spec.target = static_cast<InputId>(rng.next_below(n));
    c.spec.k = 1 + rng.next_below(12);
    const DistanceFn fns[] = {DistanceFn::l1(), DistanceFn::l2(), DistanceFn::linf()};
    c.spec.distance = fns[rng.next_below(3)];
    c.spec.mode = rng.next_below(4) == 0 ? QueryMode::highest : QueryMode::most_similar;
    c.spec.includeTarget = rng.next_below(4) != 0;
    return c;
}

double candidate_value(const QuerySpec& spec, const ActivationMatrix& acts, InputId x) {
    std::vector<float> row;
    std::vector<float> target;
    for (NeuronId g : spec.group) {
        row.push_back(acts.at(x, g));
        target.push_back(acts.at(spec.target, g));
    }
    if (spec.mode == QueryMode::highest) return activation_score(spec.distance, row);
    return similarity_distance(spec.distance, row, target);
}

} // namespace

TEST(ComputeDpar, ExampleNeuronR1) {
    const NeuralPartitionIndex idx = example_index();
    const auto d = compute_dpar(idx, 0, PartitionId(2), 1.1f);
    ASSERT_EQ(d.size(), 3u);
    EXPECT_NEAR(d[0], 1.8, 1e-6);
    EXPECT_NEAR(d[1], 0.7, 1e-6);
    EXPECT_EQ(d[2], 0.0);
}

TEST(ComputeDpar, SinglePartitionIsZero) {
    const NeuralPartitionIndex idx = build_npi(example_matrix(), 1);
    EXPECT_EQ(compute_dpar(idx, 1, PartitionId(0), 2.0f), std::vector<double>{0.0});
}

TEST(ComputeDpar, EqualsNearestMemberOnRandomData) {
    XorShift64Star rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const ActivationMatrix m = random_matrix(64, 3, 40 + trial, -1.0f, 1.0f, trial % 2 ? 5 : 0);
        const NeuralPartitionIndex idx = build_npi(m, 8);
        for (NeuronId g = 0; g < 3; ++g) {
            const InputId s = static_cast<InputId>(rng.next_below(64));
            const PartitionId sp = idx.get_pid(g, s);
            const auto d = compute_dpar(idx, g, sp, m.at(s, g));
            for (std::uint32_t p = 0; p < 8; ++p) {
                EXPECT_GE(d[p], 0.0);
                if (PartitionId(p) == sp) {
                    EXPECT_EQ(d[p], 0.0);
                    continue;
                }
                double best = std::numeric_limits<double>::infinity();
                for (InputId x : idx.get_input_ids(g, PartitionId(p))) {
                    best = std::min(best, std::abs(static_cast<double>(m.at(x, g)) - m.at(s, g)));
                }
                EXPECT_DOUBLE_EQ(d[p], best);
            }
        }
    }
}

TEST(OrderPartitions, ExampleStartsAtTargetPartition) {
    const NeuralPartitionIndex idx = example_index();
    const auto d = compute_dpar(idx, 0, PartitionId(2), 1.1f);
    const auto ord = order_partitions(d, PartitionId(2));
    EXPECT_EQ(ord, (std::vector<PartitionId>{PartitionId(2), PartitionId(1), PartitionId(0)}));
}

TEST(OrderPartitions, TiesGoByDistanceToTargetPartitionThenId) {
    const std::vector<double> d(5, 0.0);
    const auto ord = order_partitions(d, PartitionId(2));
    EXPECT_EQ(ord, (std::vector<PartitionId>{PartitionId(2), PartitionId(1), PartitionId(3), PartitionId(0),
                                             PartitionId(4)}));
}

TEST(OrderPartitions, SortedByDparOnRandomInput) {
    XorShift64Star rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = 1 + rng.next_below(32);
        const std::uint32_t s = static_cast<std::uint32_t>(rng.next_below(p));
        std::vector<double> d(p);
        for (std::size_t i = 0; i < p; ++i) d[i] = i == s ? 0.0 : 0.1 + static_cast<double>(rng.next_below(5));
        const auto ord = order_partitions(d, PartitionId(s));
        ASSERT_EQ(ord.size(), p);
        EXPECT_EQ(ord.front(), PartitionId(s));
        for (std::size_t i = 1; i < p; ++i) EXPECT_LE(d[ord[i - 1].value], d[ord[i].value]);
    }
}

TEST(Execute, WorkedExampleWithSeenBoundaryRule) {
    const MatrixSource src = example_source();
    const NeuralPartitionIndex idx = example_index();
    for (bool includeTarget : {true, false}) {
        InferenceLedger ledger;
        ExecutionOptions opt;
        opt.rule = ThresholdRule::seen_boundary;
        const TopKResult r = execute(example_query(includeTarget), src, idx, ledger, opt);
        ASSERT_EQ(r.stats.thresholds.size(), 2u);
        EXPECT_NEAR(r.stats.thresholds[0], 0.2, 1e-6);
        EXPECT_NEAR(r.stats.thresholds[1], 1.7, 1e-6);
        EXPECT_EQ(r.stats.roundsExecuted, 2u);
        EXPECT_EQ(std::ranges::count(r.stats.inferred, InputId{0}), 0);
        EXPECT_EQ(r.stats.inputsRun, 4u);
        ASSERT_EQ(r.entries.size(), 2u);
        if (includeTarget) {
            EXPECT_EQ(ids_of(r.entries), (std::vector<InputId>{5, 4}));
            EXPECT_EQ(r.entries[0].distance, 0.0);
            EXPECT_NEAR(r.entries[1].distance, 0.3, 1e-6);
        } else {
            EXPECT_EQ(ids_of(r.entries), (std::vector<InputId>{4, 2}));
            EXPECT_NEAR(r.entries[1].distance, 1.5, 1e-6);
        }
    }
}

TEST(Execute, WorkedExampleWithPartitionBoundRuleHaltsAfterFirstRound) {
    const MatrixSource src = example_source();
    InferenceLedger ledger;
    const TopKResult r = execute(example_query(true), src, example_index(), ledger);
    ASSERT_EQ(r.stats.thresholds.size(), 1u);
    EXPECT_NEAR(r.stats.thresholds[0], 1.0, 1e-6);
    EXPECT_EQ(ids_of(r.entries), (std::vector<InputId>{5, 4}));
    EXPECT_EQ(r.stats.inputsRun, 3u);
}

TEST(Execute, MaiExampleInfersOnlyX0AndX1) {
    const MatrixSource src = example_source();
    const ActivationMatrix m = example_matrix();
    const MaximumActivationIndex mai = build_mai(m, 0.6f);
    const NeuralPartitionIndex idx =
        build_npi(m, 3, NpiBuildOptions{.maiEntries = mai.entry_count(), .allowNonPowerOfTwo = true});
    for (bool includeTarget : {true, false}) {
        QuerySpec q;
        q.target = 0;
        q.group = {0, 1, 2};
        q.k = 1;
        q.distance = DistanceFn::l1();
        q.includeTarget = includeTarget;
        InferenceLedger ledger;
        ExecutionOptions opt;
        opt.batchSize = 1;
        opt.mai = &mai;
        const TopKResult r = execute(q, src, idx, ledger, opt);
        std::vector<InputId> inferred = r.stats.inferred;
        std::ranges::sort(inferred);
        EXPECT_EQ(inferred, (std::vector<InputId>{0, 1}));
        EXPECT_EQ(ledger.snapshot().inputsRun, 2u);
        EXPECT_EQ(ledger.snapshot().batchesRun, 2u);
        EXPECT_TRUE(same_distance_multiset(r.entries, brute_force_topk(q, m)));
    }
}

TEST(Execute, KEqualToInputCountRanksEverything) {
    const ActivationMatrix m = random_matrix(50, 4, 3);
    const MatrixSource src({m});
    const NeuralPartitionIndex idx = build_npi(m, 8);
    QuerySpec q;
    q.target = 7;
    q.group = {0, 2, 3};
    q.k = 50;
    InferenceLedger ledger;
    const TopKResult r = execute(q, src, idx, ledger);
    EXPECT_EQ(r.entries, brute_force_topk(q, m));
    EXPECT_FALSE(r.stats.truncated);
    EXPECT_TRUE(r.stats.exhausted);
}

TEST(Execute, OversizedKIsTruncatedAndFlagged) {
    const MatrixSource src = example_source();
    QuerySpec q = example_query(false);
    q.k = 10;
    InferenceLedger ledger;
    const TopKResult r = execute(q, src, example_index(), ledger);
    EXPECT_EQ(r.entries.size(), 5u);
    EXPECT_TRUE(r.stats.truncated);
    q.includeTarget = true;
    EXPECT_EQ(execute(q, src, example_index(), ledger).entries.size(), 6u);
}

TEST(Execute, InvalidQueriesAreRejected) {
    const MatrixSource src = example_source();
    const NeuralPartitionIndex idx = example_index();
    InferenceLedger ledger;
    auto expect_invalid = [&](auto mutate) {
        QuerySpec q = example_query(true);
        mutate(q);
        EXPECT_THROW(execute(q, src, idx, ledger), InvalidQuery);
    };
    expect_invalid([](QuerySpec& q) { q.group.clear(); });
    expect_invalid([](QuerySpec& q) { q.group = {0, 0}; });
    expect_invalid([](QuerySpec& q) { q.group = {3}; });
    expect_invalid([](QuerySpec& q) { q.k = 0; });
    expect_invalid([](QuerySpec& q) { q.target = 6; });
    expect_invalid([](QuerySpec& q) { q.theta = 0.0; });
    expect_invalid([](QuerySpec& q) { q.theta = 1.5; });
    expect_invalid([](QuerySpec& q) { q.distance = DistanceFn::weighted_l2({1.0f}); });
    EXPECT_EQ(ledger.snapshot(), LedgerSnapshot{});
}

TEST(Execute, HighestModeOnExample) {
    const MatrixSource src = example_source();
    QuerySpec q;
    q.group = {0, 1};
    q.k = 2;
    q.mode = QueryMode::highest;
    q.distance = DistanceFn::l1();
    InferenceLedger ledger;
    const TopKResult r = execute(q, src, example_index(), ledger);
    EXPECT_EQ(ids_of(r.entries), (std::vector<InputId>{0, 1}));
    EXPECT_DOUBLE_EQ(r.entries[0].distance, 6.0);
    EXPECT_EQ(std::ranges::count(r.stats.inferred, InputId{5}), 0);
}

TEST(Execute, EarlyStopAfterFirstRoundReportsTheta) {
    const MatrixSource src = example_source();
    InferenceLedger ledger;
    ExecutionOptions opt;
    opt.rule = ThresholdRule::seen_boundary;
    opt.stopAfterIterations = 1;
    const TopKResult r = execute(example_query(false), src, example_index(), ledger, opt);
    EXPECT_TRUE(r.stats.stoppedEarly);
    ASSERT_TRUE(r.stats.thetaAchieved);
    EXPECT_NEAR(*r.stats.thetaAchieved, 0.2 / 1.5, 1e-6);
    EXPECT_EQ(ids_of(r.entries), (std::vector<InputId>{4, 2}));
}

TEST(Execute, ExternalStopFlagEndsAfterCurrentIteration) {
    const ActivationMatrix m = random_matrix(400, 3, 12);
    const MatrixSource src({m});
    const NeuralPartitionIndex idx = build_npi(m, 64);
    QuerySpec q;
    q.target = 3;
    q.group = {0, 1, 2};
    q.k = 30;
    std::atomic<bool> stop{true};
    ExecutionOptions opt;
    opt.stop = &stop;
    InferenceLedger ledger;
    const TopKResult r = execute(q, src, idx, ledger, opt);
    EXPECT_TRUE(r.stats.stoppedEarly);
    EXPECT_EQ(r.stats.thresholds.size(), 1u);
    ASSERT_TRUE(r.stats.thetaAchieved);
    EXPECT_GE(*r.stats.thetaAchieved, 0.0);
    EXPECT_LT(*r.stats.thetaAchieved, 1.0);
    EXPECT_EQ(0u, count_theta_violations(q, r.entries, m, *r.stats.thetaAchieved));
}

TEST(Execute, CacheMakesRepeatQueryFree) {
    const ActivationMatrix m = random_matrix(300, 6, 19);
    const MatrixSource src({m});
    const NeuralPartitionIndex idx = build_npi(m, 16);
    ActivationCache cache(300 * 6 * sizeof(float));
    QuerySpec q;
    q.target = 9;
    q.group = {1, 4};
    q.k = 10;
    ExecutionOptions opt;
    opt.cache = &cache;
    InferenceLedger ledger;
    const TopKResult first = execute(q, src, idx, ledger, opt);
    const TopKResult second = execute(q, src, idx, ledger, opt);
    EXPECT_GT(first.stats.inputsRun, 0u);
    EXPECT_EQ(second.stats.inputsRun, 0u);
    EXPECT_EQ(second.stats.cacheHits, second.stats.inputsSeen);
    EXPECT_EQ(first.entries, second.entries);
}

TEST(ExecuteProperty, MatchesBruteForceAcrossOptions) {
    XorShift64Star rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        RandomCase c = random_case(rng, 7000 + trial);
        const MatrixSource src({c.acts});
        const std::size_t n = c.acts.rows();
        const bool useMai = c.nPartitions >= 2 && rng.next_below(2) == 0;
        const MaximumActivationIndex mai =
            build_mai(c.acts, useMai ? static_cast<float>(0.02 + rng.next_unit() * 0.3) : 0.0f);
        if (mai.entry_count() >= n) continue;
        const NeuralPartitionIndex idx =
            build_npi(c.acts, c.nPartitions, NpiBuildOptions{.maiEntries = useMai ? mai.entry_count() : 0});
        ActivationCache cache(rng.next_below(2) ? n * c.acts.cols() * 2 : 0);
        const auto expected = brute_force_topk(c.spec, c.acts);
        for (ThresholdRule rule : {ThresholdRule::partition_bound, ThresholdRule::seen_boundary}) {
            ExecutionOptions opt;
            opt.rule = rule;
            opt.batchSize = 1 + rng.next_below(20);
            opt.mai = useMai ? &mai : nullptr;
            opt.cache = &cache;
            InferenceLedger ledger;
            const TopKResult r = execute(c.spec, src, idx, ledger, opt);
            ASSERT_TRUE(same_distance_multiset(r.entries, expected)) << "trial " << trial;
            // No input is inferred twice within a query.
            std::set<InputId> unique(r.stats.inferred.begin(), r.stats.inferred.end());
            EXPECT_EQ(unique.size(), r.stats.inferred.size());
            EXPECT_EQ(r.stats.inputsRun, r.stats.inferred.size());
            EXPECT_EQ(ledger.snapshot().inputsRun, r.stats.inputsRun);
            EXPECT_LE(r.stats.inputsSeen, n);
        }
    }
}

TEST(ExecuteProperty, ThresholdNeverExceedsAnyUnseenDistance) {
    XorShift64Star rng(55);
    for (int trial = 0; trial < 150; ++trial) {
        RandomCase c = random_case(rng, 100 + trial);
        const MatrixSource src({c.acts});
        const NeuralPartitionIndex idx = build_npi(c.acts, c.nPartitions);
        for (ThresholdRule rule : {ThresholdRule::partition_bound, ThresholdRule::seen_boundary}) {
            for (std::size_t iters = 1;; ++iters) {
                ExecutionOptions opt;
                opt.rule = rule;
                opt.batchSize = 4;
                opt.stopAfterIterations = iters;
                InferenceLedger ledger;
                const TopKResult r = execute(c.spec, src, idx, ledger, opt);
                ASSERT_FALSE(r.stats.thresholds.empty());
                const double t = r.stats.thresholds.back();
                const std::set<InputId> seen(r.stats.inferred.begin(), r.stats.inferred.end());
                for (InputId x = 0; x < c.acts.rows(); ++x) {
                    if (seen.contains(x)) continue;
                    const double v = candidate_value(c.spec, c.acts, x);
                    if (c.spec.mode == QueryMode::highest) {
                        ASSERT_GE(t, v) << "trial " << trial << " iteration " << iters;
                    } else {
                        ASSERT_LE(t, v) << "trial " << trial << " iteration " << iters;
                    }
                }
                if (!r.stats.stoppedEarly) {
                    // Halted: nothing unseen could displace a kept entry.
                    const double worst = r.entries.empty() ? 0.0 : r.entries.back().distance;
                    for (InputId x = 0; x < c.acts.rows(); ++x) {
                        if (seen.contains(x) || (x == c.spec.target && c.spec.mode != QueryMode::highest)) continue;
                        const double v = candidate_value(c.spec, c.acts, x);
                        if (c.spec.mode == QueryMode::highest) {
                            EXPECT_LE(v, worst);
                        } else {
                            EXPECT_GE(v, worst);
                        }
                    }
                    break;
                }
            }
        }
    }
}

TEST(ExecuteProperty, ThetaApproximationHolds) {
    XorShift64Star rng(91);
    for (int trial = 0; trial < 150; ++trial) {
        RandomCase c = random_case(rng, 3000 + trial);
        c.spec.theta = trial % 2 ? 0.9 : 0.5;
        const MatrixSource src({c.acts});
        const NeuralPartitionIndex idx = build_npi(c.acts, c.nPartitions);
        InferenceLedger ledger;
        const TopKResult r = execute(c.spec, src, idx, ledger);
        EXPECT_EQ(count_theta_violations(c.spec, r.entries, c.acts, *c.spec.theta), 0u) << "trial " << trial;
        EXPECT_EQ(r.entries.size(), std::min(c.spec.k, all_candidate_scores(c.spec, c.acts).size()));
    }
}

TEST(ExecuteProperty, PartialsNeverRetractAndFormAPrefix) {
    XorShift64Star rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        RandomCase c = random_case(rng, 5000 + trial);
        const MatrixSource src({c.acts});
        const NeuralPartitionIndex idx = build_npi(c.acts, c.nPartitions);
        std::vector<ResultEntry> streamed;
        std::size_t lastIteration = 0;
        ExecutionOptions opt;
        opt.onPartial = [&](const PartialResult& p) {
            EXPECT_GT(p.iteration, lastIteration);
            lastIteration = p.iteration;
            streamed.insert(streamed.end(), p.entries.begin(), p.entries.end());
        };
        InferenceLedger ledger;
        const TopKResult r = execute(c.spec, src, idx, ledger, opt);
        ASSERT_EQ(streamed.size(), r.entries.size()) << "trial " << trial;
        for (std::size_t i = 0; i < streamed.size(); ++i) EXPECT_EQ(streamed[i], r.entries[i]);
    }
}

TEST(ExecuteProperty, FirstPartialOfSelfQueryHoldsTarget) {
    const ActivationMatrix m = random_matrix(200, 5, 6);
    const MatrixSource src({m});
    const NeuralPartitionIndex idx = build_npi(m, 16);
    QuerySpec q;
    q.target = 42;
    q.group = {0, 1, 2, 3, 4};
    q.k = 1;
    std::vector<PartialResult> partials;
    ExecutionOptions opt;
    opt.onPartial = [&](const PartialResult& p) { partials.push_back(p); };
    InferenceLedger ledger;
    execute(q, src, idx, ledger, opt);
    ASSERT_FALSE(partials.empty());
    ASSERT_EQ(partials.front().entries.size(), 1u);
    EXPECT_EQ(partials.front().entries[0], (ResultEntry{42, 0.0}));
}

TEST(ExecuteProperty, ResultsDoNotDependOnBatchSize) {
    SyntheticModelSpec spec;
    spec.seed = 14;
    spec.layerWidths = {24, 48};
    const SyntheticModel model(spec, 500);
    const ActivationMatrix acts = model.peek_layer(LayerId(1));
    const NeuralPartitionIndex idx = build_npi(acts, 32);
    QuerySpec q;
    q.layer = LayerId(1);
    q.target = 17;
    q.group = {3, 9, 20, 41};
    q.k = 15;
    std::vector<ResultEntry> reference;
    for (std::size_t batch : {1, 3, 16, 64, 1000}) {
        ExecutionOptions opt;
        opt.batchSize = batch;
        InferenceLedger ledger;
        const TopKResult r = execute(q, model, idx, ledger, opt);
        if (reference.empty()) reference = r.entries;
        EXPECT_TRUE(same_distance_multiset(r.entries, reference));
        EXPECT_GE(ledger.snapshot().batchesRun, (r.stats.inputsRun + batch - 1) / batch) << batch;
        if (batch == 1) EXPECT_EQ(ledger.snapshot().batchesRun, r.stats.inputsRun);
    }
}
