#pragma once

#include "everest/engine.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace everest {

// Blocking FIFO with a fixed capacity: producers wait while it is full.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    // False once the queue is closed.
    bool push(T item) {
        std::unique_lock lock(mu_);
        notFull_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        notEmpty_.notify_one();
        return true;
    }

    // nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        notEmpty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        notFull_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        notEmpty_.notify_all();
        notFull_.notify_all();
    }

private:
    std::mutex mu_;
    std::condition_variable notEmpty_;
    std::condition_variable notFull_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool closed_ = false;
};

struct ServiceOptions {
    std::string host = "127.0.0.1";
    int port = 8080; // 0 picks a free port
    std::size_t streamBuffer = 16;
    std::string corsOrigin = "*";
};

struct ServiceResponse {
    int status = 200;
    std::string body;
};

// JSON-over-HTTP front end for one session: one engine, one ledger, at most
// one running query. Handlers are callable directly for in-process use.
class QueryService {
public:
    QueryService(Engine& engine, ServiceOptions options = {});
    ~QueryService();

    QueryService(const QueryService&) = delete;
    QueryService& operator=(const QueryService&) = delete;

    // Runs a non-streaming query to completion.
    ServiceResponse handle_query(const std::string& body);
    ServiceResponse handle_stop();
    ServiceResponse handle_index_status() const;
    ServiceResponse handle_layers() const;
    ServiceResponse handle_ledger() const;

    // Starts listening on a background thread; returns the bound port.
    int start();
    void shutdown();
    bool running_query() const noexcept { return busy_.load(); }

private:
    struct Prepared;
    std::optional<ServiceResponse> prepare(const std::string& body, Prepared& out);
    void finish_query();
    void install_routes();

    Engine& engine_;
    ServiceOptions options_;
    InferenceLedger ledger_;
    std::mutex engineMu_;
    std::atomic<bool> busy_{false};
    std::atomic<bool> stop_{false};

    std::unique_ptr<httplib::Server> server_;
    std::thread listener_;
    std::mutex workersMu_;
    std::vector<std::thread> workers_;
};

} // namespace everest
