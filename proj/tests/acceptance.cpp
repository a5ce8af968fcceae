// Exit gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "everest/baselines.hpp"
#include "everest/errors.hpp"
#include "everest/formats.hpp"
#include "everest/mai.hpp"
#include "everest/npi.hpp"
#include "everest/nta.hpp"
#include "everest/oracle.hpp"
#include "everest/storage.hpp"
#include "everest/synthetic_model.hpp"
#include "everest/verification.hpp"
#include "everest/workloads.hpp"

#include "fixtures.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

using namespace everest;
using everest::testing::example_matrix;
using everest::testing::TempDir;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

const VerificationReport& verification_report() {
    static const VerificationReport report = run_verification(VerificationOptions{});
    return report;
}

Outcome oracle_equivalence() {
    const auto& r = verification_report();
    std::ostringstream s;
    s << r.queries << " queries, " << r.oracleMismatches << " mismatches (mai " << r.maiQueries << ", iqa "
      << r.iqaQueries << ", highest " << r.highestQueries << ")";
    return {r.queries == 500 && r.oracleMismatches == 0, s.str()};
}

Outcome optimality_bound() {
    const auto& r = verification_report();
    std::ostringstream s;
    s << r.boundChecks << " checks, " << r.boundViolations << " violations, max excess " << r.maxExcess;
    return {r.boundChecks == 500 && r.boundViolations == 0, s.str()};
}

QuerySpec example_query() {
    QuerySpec q;
    q.target = 5;
    q.group = {0, 1, 2};
    q.k = 2;
    q.distance = DistanceFn::l1();
    return q;
}

Outcome worked_example() {
    const MatrixSource src = everest::testing::example_source();
    const NeuralPartitionIndex idx = build_npi(example_matrix(), 3, NpiBuildOptions{.allowNonPowerOfTwo = true});
    ExecutionOptions opt;
    opt.batchSize = 1;
    opt.rule = ThresholdRule::seen_boundary;
    InferenceLedger ledger;
    const TopKResult r = execute(example_query(), src, idx, ledger, opt);
    const auto& t = r.stats.thresholds;
    const bool thresholds = t.size() == 2 && std::abs(t[0] - 0.2) < 1e-6 && std::abs(t[1] - 1.7) < 1e-6;
    const bool noX0 = std::ranges::find(r.stats.inferred, InputId{0}) == r.stats.inferred.end();
    const bool result = r.entries.size() == 2 && r.entries[0].distance == 0.0 &&
                        std::abs(r.entries[1].distance - 0.3) < 1e-6;
    std::ostringstream s;
    s << "thresholds";
    for (double v : t) s << ' ' << v;
    s << ", rounds " << r.stats.roundsExecuted << ", x0 inferred " << (noX0 ? "no" : "yes") << ", distances";
    for (const auto& e : r.entries) s << ' ' << e.distance;
    return {thresholds && r.stats.roundsExecuted == 2 && noX0 && result, s.str()};
}

Outcome mai_example() {
    const ActivationMatrix m = example_matrix();
    const MatrixSource src({m});
    const MaximumActivationIndex mai = build_mai(m, 0.6f);
    const NeuralPartitionIndex idx =
        build_npi(m, 3, NpiBuildOptions{.maiEntries = mai.entry_count(), .allowNonPowerOfTwo = true});
    QuerySpec q;
    q.target = 0;
    q.group = {0, 1, 2};
    q.k = 1;
    q.distance = DistanceFn::l1();
    ExecutionOptions opt;
    opt.batchSize = 1;
    opt.mai = &mai;
    InferenceLedger ledger;
    const TopKResult r = execute(q, src, idx, ledger, opt);
    std::vector<InputId> inferred = r.stats.inferred;
    std::ranges::sort(inferred);
    std::ostringstream s;
    s << "inferred";
    for (InputId x : inferred) s << " x" << x;
    return {inferred == std::vector<InputId>{0, 1} && ledger.snapshot().inputsRun == 2, s.str()};
}

Outcome partition_trend() {
    SyntheticModelSpec spec;
    spec.seed = 55;
    spec.layerWidths = {64};
    const SyntheticModel model(spec, 4096);
    const ActivationMatrix acts = model.peek_layer(LayerId(0));
    XorShift64Star rng(5);
    std::vector<QuerySpec> queries;
    for (int i = 0; i < 60; ++i) {
        QuerySpec q;
        q.target = static_cast<InputId>(rng.next_below(acts.rows()));
        q.group = pick_group(GroupKind::top, acts.row(q.target), 1, rng);
        q.k = 20;
        queries.push_back(q);
    }
    std::vector<double> means;
    for (std::uint32_t p : {4u, 8u, 16u, 32u, 64u}) {
        const NeuralPartitionIndex idx = build_npi(acts, p);
        double total = 0.0;
        for (const auto& q : queries) {
            InferenceLedger ledger;
            total += static_cast<double>(execute(q, model, idx, ledger).stats.inputsRun);
        }
        means.push_back(total / static_cast<double>(queries.size()));
    }
    bool ok = true;
    std::ostringstream s;
    s << "mean inputs run";
    for (std::size_t i = 0; i < means.size(); ++i) {
        s << ' ' << means[i];
        if (i > 0 && means[i] > means[i - 1] * 1.10) ok = false;
    }
    return {ok, s.str()};
}

// Largest power of two whose bit-packed PIDs fit strictly under the budget,
// capped by nInputs / batchSize; the remainder goes to 8-byte MAI entries.
std::optional<Configuration> expected_configuration(std::uint64_t budget, std::uint64_t nInputs,
                                                    std::uint64_t nNeurons, std::uint64_t batchSize) {
    std::uint64_t bits = 0;
    for (std::uint64_t b = 1; b <= 24; ++b) {
        if ((1ull << b) * batchSize > nInputs) break;
        if (nNeurons * nInputs * b < budget * 8) bits = b;
    }
    if (bits == 0) return std::nullopt;
    const double left = static_cast<double>(budget) - static_cast<double>(nNeurons * nInputs * bits) / 8.0;
    const double ratio = std::min(1.0, left / (static_cast<double>(nInputs * nNeurons) * 8.0));
    return Configuration{static_cast<std::uint32_t>(1ull << bits), static_cast<float>(ratio),
                         static_cast<std::size_t>(batchSize)};
}

Outcome configuration_formulas() {
    XorShift64Star rng(2024);
    int compared = 0;
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::uint64_t nInputs = 64 + rng.next_below(100000);
        const std::uint64_t nNeurons = 1 + rng.next_below(4096);
        const std::uint64_t batch = 1 + rng.next_below(128);
        const std::uint64_t full = nInputs * nNeurons * 4;
        const std::uint64_t budget = 1 + static_cast<std::uint64_t>(rng.next_unit() * 0.4 * static_cast<double>(full));
        const auto expected = expected_configuration(budget, nInputs, nNeurons, batch);
        try {
            const Configuration got = select_configuration(budget, nInputs, nNeurons, batch);
            if (!expected || !(got == *expected)) ++mismatches;
        } catch (const ConfigError&) {
            if (expected) ++mismatches;
        }
        ++compared;
    }
    std::ostringstream s;
    s << compared << " tuples, " << mismatches << " mismatches";
    return {compared >= 20 && mismatches == 0, s.str()};
}

Outcome theta_approximation() {
    SyntheticModelSpec spec;
    spec.seed = 31;
    spec.layerWidths = {48};
    const SyntheticModel model(spec, 1000);
    const ActivationMatrix acts = model.peek_layer(LayerId(0));
    const NeuralPartitionIndex idx = build_npi(acts, 16);
    XorShift64Star rng(77);
    std::size_t violations = 0;
    std::size_t stopped = 0;
    for (int i = 0; i < 100; ++i) {
        QuerySpec q;
        q.target = static_cast<InputId>(rng.next_below(acts.rows()));
        q.group = pick_group(i % 2 ? GroupKind::top : GroupKind::rand_high, acts.row(q.target), 1 + i % 10, rng);
        q.k = 5 + rng.next_below(30);
        const DistanceFn fns[] = {DistanceFn::l1(), DistanceFn::l2(), DistanceFn::linf()};
        q.distance = fns[i % 3];
        q.theta = 0.9;
        InferenceLedger ledger;
        const TopKResult r = execute(q, model, idx, ledger, {.batchSize = 16});
        // A theta halt leaves the exact guarantee unproven.
        if (r.stats.thetaAchieved) ++stopped;
        violations += count_theta_violations(q, r.entries, acts, 0.9);
    }
    std::ostringstream s;
    s << "100 queries, " << stopped << " halted on theta, " << violations << " violating pairs";
    return {violations == 0 && stopped > 0, s.str()};
}

Outcome iqa_effectiveness() {
    SyntheticModelSpec spec;
    spec.seed = 12;
    spec.layerWidths = {64};
    const SyntheticModel model(spec, 2000);
    const NeuralPartitionIndex idx = build_npi(model.peek_layer(LayerId(0)), 16);
    WorkloadSpec w;
    w.kind = WorkloadKind::iqa_seq;
    w.queries = 50;
    w.nSize = 5;
    w.nReplace = 1;
    w.seed = 8;
    InferenceLedger gen;
    const std::vector<QuerySpec> queries = generate_workload(w, model, gen);
    ActivationCache cache(layer_bytes(model, LayerId(0)) / 4);
    std::uint64_t with = 0;
    std::uint64_t without = 0;
    bool identical = true;
    for (const auto& q : queries) {
        InferenceLedger a;
        InferenceLedger b;
        const TopKResult r1 = execute(q, model, idx, a, {.batchSize = 16, .cache = &cache});
        const TopKResult r2 = execute(q, model, idx, b, {.batchSize = 16});
        identical = identical && r1.entries == r2.entries;
        with += a.snapshot().inputsRun;
        without += b.snapshot().inputsRun;
    }
    const double ratio = without == 0 ? 1.0 : static_cast<double>(with) / static_cast<double>(without);
    std::ostringstream s;
    s << "inputs run " << with << " vs " << without << " (ratio " << ratio << "), results "
      << (identical ? "identical" : "differ");
    return {identical && ratio <= 0.8, s.str()};
}

Outcome multi_query_ordering() {
    SyntheticModelSpec spec;
    spec.seed = 91;
    spec.layerWidths.assign(10, 64);
    const SyntheticModel model(spec, 3000);
    const std::uint64_t full = full_materialization_bytes(model);
    TempDir dir("accept");
    ReprocessAll reprocess(model, 8);
    LruLayerCache lru(model, 8, full / 5);
    IncrementalIndexStrategy everest(model, {dir.path(), full / 5, 8, true});
    Strategy* all[] = {&reprocess, &lru, &everest};
    WorkloadSpec w;
    w.kind = WorkloadKind::w1;
    w.queries = 200;
    w.seed = 13;
    InferenceLedger gen;
    const auto rows = run_harness(generate_workload(w, model, gen), all);
    std::uint64_t rep = 0;
    std::uint64_t lruUnits = 0;
    std::uint64_t ev = 0;
    bool agree = true;
    for (std::size_t i = 0; i + 2 < rows.size(); i += 3) {
        agree = agree && rows[i].resultHash == rows[i + 1].resultHash && rows[i].resultHash == rows[i + 2].resultHash;
    }
    for (const auto& r : rows) {
        if (r.strategy == "reprocess") rep = r.cumulativeUnits;
        if (r.strategy == "lru") lruUnits = r.cumulativeUnits;
        if (r.strategy == "everest") ev = r.cumulativeUnits;
    }
    const std::uint64_t disk = everest.bytes_stored();
    std::ostringstream s;
    s << "cumulative units everest " << ev << ", reprocess " << rep << ", lru " << lruUnits << "; disk " << disk
      << " of " << full << "; results " << (agree ? "agree" : "differ");
    return {ev < rep && ev < lruUnits && disk * 5 <= full && agree, s.str()};
}

Outcome serialization() {
    const auto golden = [](const std::string& name) {
        return read_file_bytes(std::filesystem::path(EVEREST_GOLDEN_DIR) / name);
    };
    const ActivationMatrix m = example_matrix();
    ActivationMatrix pattern(LayerId(1), 37, 5);
    for (std::size_t i = 0; i < 37; ++i) {
        for (std::size_t n = 0; n < 5; ++n) {
            pattern.at(i, n) = static_cast<float>(static_cast<double>((i * 7 + n * 13) % 17) / 4.0 - 1.0);
        }
    }
    ActivationMatrix first(LayerId(0), 37, 3);
    for (std::size_t i = 0; i < 37; ++i) {
        for (std::size_t n = 0; n < 3; ++n) {
            first.at(i, n) = static_cast<float>(static_cast<double>((i * 7 + n * 13) % 17) / 4.0 - 1.0);
        }
    }
    const std::vector<ActivationMatrix> both = {first, pattern};
    const MaximumActivationIndex patternMai = build_mai(pattern, 0.2f);
    int failures = 0;
    const auto check = [&](bool ok) { failures += ok ? 0 : 1; };
    check(encode_activations(std::span(&m, 1)) == golden("example.actv"));
    check(encode_npi(build_npi(m, 2)) == golden("example_p2.npi"));
    check(encode_npi(build_npi(m, 3, NpiBuildOptions{.allowNonPowerOfTwo = true})) == golden("example_p3.npi"));
    check(encode_mai(build_mai(m, 0.6f)) == golden("example_r06.mai"));
    check(encode_activations(both) == golden("pattern.actv"));
    check(encode_npi(build_npi(pattern, 8)) == golden("pattern_p8.npi"));
    check(encode_npi(build_npi(pattern, 8, NpiBuildOptions{.maiEntries = patternMai.entry_count()})) ==
          golden("pattern_p8_mai.npi"));
    check(encode_mai(patternMai) == golden("pattern_r02.mai"));

    XorShift64Star rng(10);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng.next_below(300);
        const ActivationMatrix r = everest::testing::random_matrix(n, 1 + rng.next_below(8), 500 + trial, -4.0f, 4.0f);
        std::uint32_t p = 2u << rng.next_below(5);
        while (p > n) p >>= 1;
        const NeuralPartitionIndex idx = build_npi(r, p);
        const MaximumActivationIndex mai = build_mai(r, static_cast<float>(rng.next_unit() * 0.3));
        check(decode_activations(encode_activations(std::span(&r, 1))).at(0) == r);
        check(decode_npi(encode_npi(idx)) == idx);
        check(decode_mai(encode_mai(mai)) == mai);
        check(encode_npi(decode_npi(encode_npi(idx))) == encode_npi(idx));
    }
    std::ostringstream s;
    s << "8 golden files, 120 round trips, " << failures << " failures";
    return {failures == 0, s.str()};
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const Criterion criteria[] = {
        {"oracle equivalence", oracle_equivalence},
        {"instance-optimality bound", optimality_bound},
        {"worked example replay", worked_example},
        {"MAI replay", mai_example},
        {"partition-count trend", partition_trend},
        {"configuration formulas", configuration_formulas},
        {"theta approximation", theta_approximation},
        {"IQA effectiveness", iqa_effectiveness},
        {"multi-query ordering", multi_query_ordering},
        {"serialization", serialization},
    };
    int failed = 0;
    int idx = 1;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", idx, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
        ++idx;
    }
    std::printf("%d of %d criteria passed\n", idx - 1 - failed, idx - 1);
    return failed == 0 ? 0 : 1;
}
