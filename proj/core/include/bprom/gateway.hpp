#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bprom/endpoint.hpp"
#include "bprom/trainer.hpp"

namespace bprom {

struct GatewayConfig {
    std::string bind_address = "127.0.0.1";
    int port = 0;  // 0 = pick a free port
    int batch_limit = 256;
    uint64_t quota = 0;  // 0 = unlimited, otherwise max images per key
    std::string model_id = "model";
    std::string access_log_path;  // empty = no log
};

struct GatewayStats {
    uint64_t queries_served = 0;
    std::string model_id;
    double uptime_seconds = 0.0;
};

// Confidence-vector-only wrapper around a trained model, shared by the
// in-process and HTTP paths. Enforces the batch limit and per-key quota and
// counts every served image exactly once.
class ModelGateway {
public:
    ModelGateway(std::shared_ptr<const ClassifierHandle> model, GatewayConfig config);

    // Throws Endpoint errors: over-limit batch, malformed image (with its
    // index), exhausted quota (counter unchanged).
    std::vector<std::vector<float>> predict(const std::vector<const Image*>& batch,
                                            const std::string& key = "");

    GatewayStats stats() const;
    const GatewayConfig& config() const { return config_; }
    Geometry input_geometry() const { return model_->input_geometry(); }
    int num_classes() const { return model_->num_classes(); }

private:
    std::shared_ptr<const ClassifierHandle> model_;
    GatewayConfig config_;
    std::atomic<uint64_t> served_{0};
    std::atomic<uint64_t> quota_used_{0};  // single-key accounting
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// In-process endpoint view of a gateway.
class InProcessEndpoint : public Endpoint {
public:
    explicit InProcessEndpoint(std::shared_ptr<ModelGateway> gateway)
        : gateway_(std::move(gateway)) {}

    std::vector<std::vector<float>> predict(const std::vector<const Image*>& batch) override {
        return gateway_->predict(batch);
    }
    int num_classes() const override { return gateway_->num_classes(); }
    Geometry input_geometry() const override { return gateway_->input_geometry(); }

    const ModelGateway& gateway() const { return *gateway_; }

private:
    std::shared_ptr<ModelGateway> gateway_;
};

std::shared_ptr<InProcessEndpoint> make_inprocess_endpoint(
    std::shared_ptr<const ClassifierHandle> model, std::string model_id = "model");

// HTTP server exposing POST /v1/predict and GET /v1/stats. Body:
//   {"images": [[...row-major floats...]], "shape": [H, W, C]}
// Response: {"confidences": [[...]]}. Every request line is appended to the
// access log when configured.
class GatewayServer {
public:
    GatewayServer(std::shared_ptr<const ClassifierHandle> model, GatewayConfig config);
    ~GatewayServer();

    GatewayServer(const GatewayServer&) = delete;
    GatewayServer& operator=(const GatewayServer&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    int port() const { return port_; }
    const ModelGateway& gateway() const { return *gateway_; }

private:
    struct Impl;
    std::shared_ptr<ModelGateway> gateway_;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
};

// Client-side endpoint speaking the gateway wire format. Retries transient
// failures up to `max_retries` before giving up.
class HttpEndpoint : public Endpoint {
public:
    HttpEndpoint(std::string host, int port, int max_retries = 3);
    ~HttpEndpoint() override;

    // Supplying the metadata up front keeps the client off /v1/stats, so a
    // detection run touches /v1/predict only.
    void set_metadata(Geometry geometry, int num_classes);

    std::vector<std::vector<float>> predict(const std::vector<const Image*>& batch) override;
    int num_classes() const override;
    Geometry input_geometry() const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    mutable int num_classes_ = -1;
    mutable Geometry geometry_{};
};

}  // namespace bprom
