#include "everest/verification.hpp"

#include "everest/iqa_cache.hpp"
#include "everest/mai.hpp"
#include "everest/npi.hpp"
#include "everest/oracle.hpp"
#include "everest/synthetic_model.hpp"
#include "everest/workloads.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <tuple>

namespace everest {

namespace {

struct LayerIndexes {
    NeuralPartitionIndex npi;
    MaximumActivationIndex mai;
};

class IndexPool {
public:
    explicit IndexPool(const std::vector<ActivationMatrix>& layers) : layers_(layers) {}

    const LayerIndexes& get(std::uint32_t layer, std::uint32_t nPartitions, float ratio) {
        auto key = std::make_tuple(layer, nPartitions, ratio);
        auto it = pool_.find(key);
        if (it != pool_.end()) return *it->second;
        const ActivationMatrix& acts = layers_[layer];
        auto built = std::make_unique<LayerIndexes>();
        built->mai = build_mai(acts, ratio);
        built->npi = build_npi(acts, nPartitions, NpiBuildOptions{.maiEntries = built->mai.entry_count()});
        return *pool_.emplace(key, std::move(built)).first->second;
    }

private:
    const std::vector<ActivationMatrix>& layers_;
    std::map<std::tuple<std::uint32_t, std::uint32_t, float>, std::unique_ptr<LayerIndexes>> pool_;
};

std::string describe(const QuerySpec& q, std::uint32_t nPartitions, float ratio, bool iqa) {
    std::ostringstream os;
    os << "layer=" << q.layer.index << " target=" << q.target << " k=" << q.k << " mode=" << to_string(q.mode)
       << " dist=" << q.distance.name() << " nP=" << nPartitions << " ratio=" << ratio << " iqa=" << iqa
       << " includeTarget=" << q.includeTarget << " group=";
    for (std::size_t i = 0; i < q.group.size(); ++i) os << (i ? "," : "") << q.group[i];
    return os.str();
}

} // namespace

VerificationReport run_verification(const VerificationOptions& options) {
    SyntheticModelSpec modelSpec;
    modelSpec.seed = options.seed;
    modelSpec.layerWidths = options.layerWidths;
    const SyntheticModel model(modelSpec, options.nInputs);

    std::vector<ActivationMatrix> layers;
    for (std::uint32_t l = 0; l < model.layer_count(); ++l) layers.push_back(model.peek_layer(LayerId(l)));
    IndexPool pool(layers);

    XorShift64Star rng(options.seed ^ 0x9e3779b97f4a7c15ull);
    InferenceLedger generation;
    InferenceLedger ledger;
    ActivationCache cache(options.nInputs * 64 * sizeof(float));

    const std::size_t groupSizes[] = {1, 3, 10};
    const std::uint32_t partitionCounts[] = {4, 8, 16, 32, 64};
    const float ratios[] = {0.01f, 0.05f, 0.1f};
    const std::size_t ks[] = {1, 5, 20, 50};
    const DistanceFn distances[] = {DistanceFn::l1(), DistanceFn::l2(), DistanceFn::linf()};

    VerificationReport report;
    report.maxExcess = std::numeric_limits<long long>::min();
    for (std::size_t q = 0; q < options.queries; ++q) {
        const LayerId layer(static_cast<std::uint32_t>(rng.next_below(model.layer_count())));
        const std::size_t width = model.layer_width(layer);
        const std::size_t groupSize = std::min(groupSizes[q % 3], width);
        const GroupKind kind = rng.next_below(2) == 0 ? GroupKind::top : GroupKind::rand_high;

        QuerySpec spec = make_query(model, layer, kind, groupSize, ks[rng.next_below(4)], rng, generation);
        spec.distance = distances[rng.next_below(3)];
        spec.mode = rng.next_below(4) == 0 ? QueryMode::highest : QueryMode::most_similar;
        spec.includeTarget = rng.next_below(5) != 0;
        const std::uint32_t nPartitions = partitionCounts[rng.next_below(5)];
        const bool useMai = rng.next_below(2) == 0;
        const bool useIqa = rng.next_below(2) == 0;
        const float ratio = useMai ? ratios[rng.next_below(3)] : 0.0f;

        report.maiQueries += useMai;
        report.iqaQueries += useIqa;
        report.highestQueries += spec.mode == QueryMode::highest;

        const LayerIndexes& indexes = pool.get(layer.index, nPartitions, ratio);
        ExecutionOptions exec;
        exec.batchSize = options.batchSize;
        exec.rule = options.rule;
        exec.mai = useMai ? &indexes.mai : nullptr;
        exec.cache = useIqa ? &cache : nullptr;
        const TopKResult got = execute(spec, model, indexes.npi, ledger, exec);
        const std::vector<ResultEntry> expected = brute_force_topk(spec, layers[layer.index]);
        if (!same_distance_multiset(got.entries, expected)) {
            ++report.oracleMismatches;
            report.failures.push_back({q, "oracle", describe(spec, nPartitions, ratio, useIqa)});
        }

        // The access bound covers plain partition traversal.
        const LayerIndexes& plain = pool.get(layer.index, nPartitions, 0.0f);
        ExecutionOptions bare;
        bare.batchSize = options.batchSize;
        bare.rule = options.rule;
        const TopKResult run = execute(spec, model, plain.npi, ledger, bare);
        const CtaResult cta = cta_reference(spec, layers[layer.index], build_abs_diff_lists(spec, layers[layer.index]));
        const OptimalityReport bound = check_instance_optimality(run.stats, cta, plain.npi.max_partition_size());
        ++report.boundChecks;
        report.maxExcess = std::max(report.maxExcess, bound.maxExcess);
        if (!bound.pass) {
            ++report.boundViolations;
            std::ostringstream os;
            os << describe(spec, nPartitions, 0.0f, false) << " d=" << bound.d << " R=" << bound.R << " accessed=";
            for (std::size_t i = 0; i < bound.perNeuronAccessed.size(); ++i) {
                os << (i ? "," : "") << bound.perNeuronAccessed[i];
            }
            report.failures.push_back({q, "bound", os.str()});
        }
        ++report.queries;
    }
    if (report.queries == 0) report.maxExcess = 0;
    return report;
}

} // namespace everest
