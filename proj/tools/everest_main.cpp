#include "everest/baselines.hpp"
#include "everest/engine.hpp"
#include "everest/errors.hpp"
#include "everest/formats.hpp"
#include "everest/json_io.hpp"
#include "everest/service.hpp"
#include "everest/storage.hpp"
#include "everest/synthetic_model.hpp"
#include "everest/verification.hpp"
#include "everest/workloads.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

using namespace everest;
using nlohmann::json;

namespace {

struct SessionArgs {
    std::string data = "activations.actv";
    std::string indexDir = "everest_index";
    std::uint64_t budgetBytes = 0; // 0: a fifth of full materialization
    std::size_t iqaBudgetBytes = 0;
    std::size_t batchSize = 64;
    bool seenBoundary = false;
};

void add_session_options(CLI::App* cmd, SessionArgs& a) {
    cmd->add_option("--data", a.data, "ACTV file standing in for the model")->capture_default_str();
    cmd->add_option("--index-dir", a.indexDir, "Directory holding indexes and the catalog")->capture_default_str();
    cmd->add_option("--budget-bytes", a.budgetBytes, "Index storage budget (0: 20% of full materialization)");
    cmd->add_option("--iqa-budget-bytes", a.iqaBudgetBytes, "In-memory activation cache budget (0 disables)");
    cmd->add_option("--batch-size", a.batchSize, "Inference batch size")->capture_default_str();
    cmd->add_flag("--seen-boundary", a.seenBoundary, "Use the seen-boundary threshold rule");
}

// Everything one CLI invocation needs to answer queries against a data file.
struct Session {
    MatrixSource source;
    IndexManager manager;
    std::unique_ptr<ActivationCache> cache;
    Engine engine;

    static std::uint64_t budget_for(const MatrixSource& s, const SessionArgs& a) {
        return a.budgetBytes ? a.budgetBytes : full_materialization_bytes(s) / 5;
    }

    explicit Session(const SessionArgs& a)
        : source(load_activation_file(a.data)),
          manager(source, {a.indexDir, budget_for(source, a), a.batchSize, true}),
          cache(a.iqaBudgetBytes ? std::make_unique<ActivationCache>(a.iqaBudgetBytes) : nullptr),
          engine(source, manager, cache.get(),
                 {.batchSize = a.batchSize,
                  .rule = a.seenBoundary ? ThresholdRule::seen_boundary : ThresholdRule::partition_bound}) {}
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// One CSV per layer; each line is one input's activations.
ActivationMatrix read_csv_layer(const std::string& path, std::uint32_t layer) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<float> values;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (rows == 0) {
            cols = cells.size();
        } else if (cells.size() != cols) {
            throw ConfigError(path + ": row " + std::to_string(rows) + " has " + std::to_string(cells.size()) +
                              " values, expected " + std::to_string(cols));
        }
        for (const auto& c : cells) values.push_back(std::stof(c));
        ++rows;
    }
    return ActivationMatrix(LayerId(layer), rows, cols, std::move(values));
}

std::unique_ptr<Strategy> make_strategy(const std::string& name, const ActivationSource& source,
                                        const SessionArgs& a) {
    const auto colon = name.find(':');
    const std::string kind = name.substr(0, colon);
    const std::uint64_t bytes = colon == std::string::npos ? 0 : std::stoull(name.substr(colon + 1));
    if (kind == "reprocess") return std::make_unique<ReprocessAll>(source, a.batchSize);
    if (kind == "preprocess") return std::make_unique<PreprocessAll>(source, a.batchSize);
    if (kind == "lru") return std::make_unique<LruLayerCache>(source, a.batchSize, bytes);
    if (kind == "priority") return std::make_unique<PriorityLayerCache>(source, a.batchSize, bytes);
    if (kind == "everest") {
        const std::uint64_t budget = a.budgetBytes ? a.budgetBytes : full_materialization_bytes(source) / 5;
        return std::make_unique<IncrementalIndexStrategy>(
            source, IndexManagerOptions{a.indexDir, budget, a.batchSize, true},
            EngineOptions{.batchSize = a.batchSize}, a.iqaBudgetBytes);
    }
    throw ConfigError("unknown strategy '" + name + "'");
}

std::atomic<bool> gInterrupted{false};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Top-k queries over neural network activations"};
    app.require_subcommand(1);

    std::uint64_t genSeed = 1;
    std::string genWidths = "32,64";
    std::size_t genInputs = 1000;
    std::string genOut = "activations.actv";
    auto* gen = app.add_subcommand("gen-synthetic", "Write a seeded synthetic model's activations");
    gen->add_option("--seed", genSeed)->capture_default_str();
    gen->add_option("--widths", genWidths, "Comma-separated layer widths")->capture_default_str();
    gen->add_option("--inputs", genInputs)->capture_default_str();
    gen->add_option("--out", genOut)->capture_default_str();

    std::string importIn;
    std::string importOut = "activations.actv";
    auto* imp = app.add_subcommand("import-activations", "Convert per-layer CSV files to ACTV");
    imp->add_option("--in", importIn, "Comma-separated CSV files, one per layer")->required();
    imp->add_option("--out", importOut)->capture_default_str();

    SessionArgs session;
    std::uint32_t qLayer = 0;
    InputId qTarget = 0;
    std::string qNeurons;
    std::size_t qK = 20;
    std::string qDist = "l2";
    std::string qMode = "similar";
    std::optional<double> qTheta;
    bool qStream = false;
    bool qExclude = false;
    auto* query = app.add_subcommand("query", "Run one top-k query");
    add_session_options(query, session);
    query->add_option("--layer", qLayer)->required();
    query->add_option("--target", qTarget);
    query->add_option("--neurons", qNeurons, "Comma-separated neuron ids")->required();
    query->add_option("--k", qK)->capture_default_str();
    query->add_option("--dist", qDist, "l1, l2, linf or wl2:w1,w2,...")->capture_default_str();
    query->add_option("--mode", qMode, "similar or highest")->capture_default_str();
    query->add_option("--theta", qTheta, "Stop once this approximation guarantee holds");
    query->add_flag("--stream", qStream, "Print confirmed entries as NDJSON while running");
    query->add_flag("--exclude-target", qExclude, "Do not count the target as a result");

    std::uint32_t idxLayer = 0;
    auto* index = app.add_subcommand("index", "Build and persist one layer's indexes");
    add_session_options(index, session);
    index->add_option("--layer", idxLayer)->required();

    auto* status = app.add_subcommand("index-status", "Print the index catalog");
    add_session_options(status, session);

    std::string benchStrategy = "everest";
    std::string benchWorkload = "w1";
    std::size_t benchQueries = 100;
    std::uint64_t benchSeed = 1;
    std::string benchOut = "results.csv";
    auto* bench = app.add_subcommand("bench", "Run a workload through one strategy and write a CSV");
    add_session_options(bench, session);
    bench->add_option("--strategy", benchStrategy, "reprocess|preprocess|lru:BYTES|priority:BYTES|everest")
        ->capture_default_str();
    bench->add_option("--workload", benchWorkload, "w1|w2|w3|iqa")->capture_default_str();
    bench->add_option("--queries", benchQueries)->capture_default_str();
    bench->add_option("--seed", benchSeed)->capture_default_str();
    bench->add_option("--out", benchOut)->capture_default_str();

    std::size_t verifyQueries = 500;
    std::uint64_t verifySeed = 42;
    bool verifySeen = false;
    auto* verify = app.add_subcommand("verify", "Check random queries against brute force and the access bound");
    verify->add_option("--queries", verifyQueries)->capture_default_str();
    verify->add_option("--seed", verifySeed)->capture_default_str();
    verify->add_flag("--seen-boundary", verifySeen, "Use the seen-boundary threshold rule");

    ServiceOptions serveOptions;
    auto* serve = app.add_subcommand("serve", "Serve the JSON API over HTTP");
    add_session_options(serve, session);
    serve->add_option("--host", serveOptions.host)->capture_default_str();
    serve->add_option("--port", serveOptions.port)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            SyntheticModelSpec spec;
            spec.seed = genSeed;
            for (const auto& w : split(genWidths, ',')) spec.layerWidths.push_back(std::stoul(w));
            const SyntheticModel model(spec, genInputs);
            std::vector<ActivationMatrix> layers;
            for (std::uint32_t l = 0; l < model.layer_count(); ++l) layers.push_back(model.peek_layer(LayerId(l)));
            write_activation_file(genOut, layers);
            std::cout << json{{"out", genOut}, {"layers", layers.size()}, {"inputs", genInputs}}.dump() << '\n';
        } else if (*imp) {
            std::vector<ActivationMatrix> layers;
            const auto files = split(importIn, ',');
            for (std::uint32_t l = 0; l < files.size(); ++l) layers.push_back(read_csv_layer(files[l], l));
            const MatrixSource check(layers); // rejects mismatched input counts
            write_activation_file(importOut, layers);
            std::cout << json{{"out", importOut}, {"layers", layers.size()}, {"inputs", check.input_count()}}.dump()
                      << '\n';
        } else if (*query) {
            json body = {{"layer", qLayer}, {"target", qTarget}, {"k", qK},
                         {"dist", qDist},   {"mode", qMode},     {"includeTarget", !qExclude}};
            std::vector<NeuronId> neurons;
            for (const auto& n : split(qNeurons, ',')) neurons.push_back(static_cast<NeuronId>(std::stoul(n)));
            body["neurons"] = neurons;
            if (qTheta) body["theta"] = *qTheta;
            const QuerySpec spec = query_from_json(body);
            Session s(session);
            InferenceLedger ledger;
            ExecutionOptions extra;
            if (qStream) {
                extra.onPartial = [&](const PartialResult& p) {
                    std::cout << to_json(p, spec.mode).dump() << '\n' << std::flush;
                };
            }
            const EngineAnswer answer = s.engine.query(spec, ledger, extra);
            json out = to_json(answer.result, spec.mode);
            out["fullScan"] = answer.fullScan;
            std::cout << (qStream ? json{{"final", out}}.dump() : out.dump(2)) << '\n';
        } else if (*index) {
            Session s(session);
            InferenceLedger ledger;
            const auto outcome = s.manager.ensure_indexed(LayerId(idxLayer), ledger);
            json out = {{"layer", idxLayer}, {"built", outcome.built}, {"inputsRun", ledger.snapshot().inputsRun}};
            for (const auto& e : s.manager.catalog()) {
                if (e.layer.index == idxLayer) out["entry"] = to_json(e);
            }
            std::cout << out.dump(2) << '\n';
            if (!outcome.built) return 3;
        } else if (*status) {
            Session s(session);
            json layers = json::array();
            for (const auto& e : s.manager.catalog()) layers.push_back(to_json(e));
            std::cout << json{{"budgetBytes", s.manager.budget_bytes()},
                              {"bytesOnDisk", s.manager.bytes_on_disk()},
                              {"layers", layers}}
                             .dump(2)
                      << '\n';
        } else if (*bench) {
            const MatrixSource source = load_activation_file(session.data);
            WorkloadSpec w;
            w.kind = parse_workload(benchWorkload);
            w.queries = benchQueries;
            w.seed = benchSeed;
            InferenceLedger gen;
            const auto queries = generate_workload(w, source, gen);
            auto strategy = make_strategy(benchStrategy, source, session);
            Strategy* all[] = {strategy.get()};
            const auto rows = run_harness(queries, all);
            std::ofstream out(benchOut);
            if (!out) throw IoError("cannot write " + benchOut);
            write_harness_csv(out, rows);
            std::cout << json{{"out", benchOut},
                              {"queries", queries.size()},
                              {"cumulativeUnits", rows.empty() ? 0 : rows.back().cumulativeUnits},
                              {"bytesStored", strategy->bytes_stored()}}
                             .dump()
                      << '\n';
        } else if (*verify) {
            VerificationOptions v;
            v.queries = verifyQueries;
            v.seed = verifySeed;
            if (verifySeen) v.rule = ThresholdRule::seen_boundary;
            const VerificationReport report = run_verification(v);
            std::cout << to_json(report).dump(2) << '\n';
            return report.oracleMismatches == 0 && report.boundViolations == 0 ? 0 : 1;
        } else if (*serve) {
            Session s(session);
            QueryService service(s.engine, serveOptions);
            const int port = service.start();
            std::cout << json{{"listening", serveOptions.host}, {"port", port}}.dump() << '\n' << std::flush;
            std::signal(SIGINT, [](int) { gInterrupted = true; });
            std::signal(SIGTERM, [](int) { gInterrupted = true; });
            while (!gInterrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            service.shutdown();
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
