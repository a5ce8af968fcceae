#include "everest/service.hpp"

#include "everest/errors.hpp"
#include "everest/json_io.hpp"

#include <httplib.h>

namespace everest {

using nlohmann::json;

namespace {

ServiceResponse error_response(int status, const std::string& message) {
    return {status, json{{"error", message}}.dump()};
}

} // namespace

struct QueryService::Prepared {
    QuerySpec spec;
    bool stream = false;
    std::optional<std::size_t> stopAfter;
};

QueryService::QueryService(Engine& engine, ServiceOptions options) : engine_(engine), options_(std::move(options)) {}

QueryService::~QueryService() {
    shutdown();
}

std::optional<ServiceResponse> QueryService::prepare(const std::string& body, Prepared& out) {
    json doc;
    try {
        doc = json::parse(body);
        out.spec = query_from_json(doc);
        out.stream = doc.value("stream", false);
        if (doc.contains("stopAfterRounds") && !doc["stopAfterRounds"].is_null()) {
            out.stopAfter = doc["stopAfterRounds"].get<std::size_t>();
        }
        const ActivationSource& source = engine_.source();
        if (out.spec.layer.index >= source.layer_count()) {
            throw InvalidQuery("layer " + std::to_string(out.spec.layer.index) + " out of range");
        }
        validate_query(out.spec, source.input_count(), source.layer_width(out.spec.layer));
    } catch (const json::exception& e) {
        return error_response(400, std::string("malformed request: ") + e.what());
    } catch (const InvalidQuery& e) {
        return error_response(400, e.what());
    }
    if (busy_.exchange(true)) {
        return error_response(409, "a query is already running");
    }
    stop_ = false;
    return std::nullopt;
}

void QueryService::finish_query() {
    busy_ = false;
}

ServiceResponse QueryService::handle_query(const std::string& body) {
    Prepared p;
    if (auto err = prepare(body, p)) return *err;
    try {
        std::lock_guard lock(engineMu_);
        ExecutionOptions extra;
        extra.stop = &stop_;
        extra.stopAfterIterations = p.stopAfter;
        EngineAnswer answer = engine_.query(p.spec, ledger_, extra);
        finish_query();
        json out = to_json(answer.result, p.spec.mode);
        out["fullScan"] = answer.fullScan;
        return {200, out.dump()};
    } catch (const InvalidQuery& e) {
        finish_query();
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        finish_query();
        return error_response(500, e.what());
    }
}

ServiceResponse QueryService::handle_stop() {
    if (!busy_.load()) {
        return error_response(404, "no running query");
    }
    stop_ = true;
    return {200, json{{"stopping", true}}.dump()};
}

ServiceResponse QueryService::handle_index_status() const {
    json layers = json::array();
    for (const auto& e : engine_.manager().catalog()) layers.push_back(to_json(e));
    return {200, json{{"budgetBytes", engine_.manager().budget_bytes()},
                      {"bytesOnDisk", engine_.manager().bytes_on_disk()},
                      {"layers", layers}}
                     .dump()};
}

ServiceResponse QueryService::handle_layers() const {
    const ActivationSource& source = engine_.source();
    json layers = json::array();
    for (std::uint32_t l = 0; l < source.layer_count(); ++l) {
        const LayerId layer(l);
        layers.push_back({{"layerId", l},
                          {"width", source.layer_width(layer)},
                          {"depth", source.layer_depth(layer)},
                          {"indexed", engine_.manager().is_built(layer)}});
    }
    return {200, json{{"inputs", source.input_count()}, {"layers", layers}}.dump()};
}

ServiceResponse QueryService::handle_ledger() const {
    const LedgerSnapshot s = ledger_.snapshot();
    return {200, json{{"inputsRun", s.inputsRun}, {"batchesRun", s.batchesRun}, {"unitCost", s.unitCost}}.dump()};
}

void QueryService::install_routes() {
    auto reply = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };

    server_->set_default_headers({{"Access-Control-Allow-Origin", options_.corsOrigin},
                                  {"Access-Control-Allow-Headers", "Content-Type"},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server_->Post("/query", [this, reply](const httplib::Request& req, httplib::Response& res) {
        bool stream = false;
        try {
            stream = json::parse(req.body).value("stream", false);
        } catch (const json::exception&) {
            // prepare() reports the parse error
        }
        if (!stream) {
            reply(res, handle_query(req.body));
            return;
        }
        auto p = std::make_shared<Prepared>();
        if (auto err = prepare(req.body, *p)) {
            reply(res, *err);
            return;
        }
        auto events = std::make_shared<BoundedQueue<std::string>>(options_.streamBuffer);
        {
            std::lock_guard lock(workersMu_);
            workers_.emplace_back([this, p, events] {
                const QueryMode mode = p->spec.mode;
                try {
                    std::lock_guard engineLock(engineMu_);
                    ExecutionOptions extra;
                    extra.stop = &stop_;
                    extra.stopAfterIterations = p->stopAfter;
                    extra.onPartial = [&](const PartialResult& partial) {
                        events->push(to_json(partial, mode).dump() + "\n");
                    };
                    EngineAnswer answer = engine_.query(p->spec, ledger_, extra);
                    finish_query();
                    json done = {{"final", to_json(answer.result, mode)},
                                 {"threshold", answer.result.stats.finalThreshold},
                                 {"theta", nullptr},
                                 {"fullScan", answer.fullScan}};
                    if (answer.result.stats.thetaAchieved) done["theta"] = *answer.result.stats.thetaAchieved;
                    if (!std::isfinite(answer.result.stats.finalThreshold)) done["threshold"] = nullptr;
                    events->push(done.dump() + "\n");
                } catch (const std::exception& e) {
                    finish_query();
                    events->push(json{{"error", e.what()}}.dump() + "\n");
                }
                events->close();
            });
        }
        res.set_chunked_content_provider(
            "application/x-ndjson",
            [this, events](std::size_t, httplib::DataSink& sink) {
                auto line = events->pop();
                if (!line) {
                    sink.done();
                    return true;
                }
                if (!sink.write(line->data(), line->size())) {
                    stop_ = true;
                    events->close();
                    return false;
                }
                return true;
            },
            [this, events](bool success) {
                if (!success) stop_ = true;
                events->close();
            });
    });

    server_->Post("/stop", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_stop()); });
    server_->Get("/index-status",
                 [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_index_status()); });
    server_->Get("/layers", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_layers()); });
    server_->Get("/ledger", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_ledger()); });
}

int QueryService::start() {
    if (server_) {
        throw ContractViolation("service already started");
    }
    server_ = std::make_unique<httplib::Server>();
    install_routes();
    int port = options_.port;
    if (port == 0) {
        port = server_->bind_to_any_port(options_.host);
    } else if (!server_->bind_to_port(options_.host, port)) {
        port = -1;
    }
    if (port < 0) {
        server_.reset();
        throw IoError("cannot bind " + options_.host + ":" + std::to_string(options_.port));
    }
    listener_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void QueryService::shutdown() {
    stop_ = true;
    if (server_) server_->stop();
    if (listener_.joinable()) listener_.join();
    std::vector<std::thread> workers;
    {
        std::lock_guard lock(workersMu_);
        workers.swap(workers_);
    }
    for (auto& t : workers) {
        if (t.joinable()) t.join();
    }
    server_.reset();
}

} // namespace everest
