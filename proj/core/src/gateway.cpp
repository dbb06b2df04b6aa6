#include "bprom/gateway.hpp"

#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "bprom/common.hpp"

using nlohmann::json;

namespace bprom {

ModelGateway::ModelGateway(std::shared_ptr<const ClassifierHandle> model, GatewayConfig config)
    : model_(std::move(model)), config_(std::move(config)) {
    if (!model_) throw Error(ErrorCategory::Config, "gateway: missing model");
    if (config_.batch_limit < 1) {
        throw Error(ErrorCategory::Config, "gateway: batch limit must be >= 1");
    }
}

std::vector<std::vector<float>> ModelGateway::predict(const std::vector<const Image*>& batch,
                                                      const std::string& /*key*/) {
    if (batch.empty()) {
        throw Error(ErrorCategory::Geometry, "gateway: empty batch");
    }
    if (batch.size() > static_cast<size_t>(config_.batch_limit)) {
        throw Error(ErrorCategory::Endpoint,
                    "gateway: batch of " + std::to_string(batch.size()) + " exceeds limit " +
                        std::to_string(config_.batch_limit));
    }
    const Geometry expect = model_->input_geometry();
    for (size_t i = 0; i < batch.size(); ++i) {
        if (batch[i]->geometry != expect) {
            throw Error(ErrorCategory::Geometry,
                        "gateway: image " + std::to_string(i) + " has geometry " +
                            to_string(batch[i]->geometry) + ", expected " + to_string(expect));
        }
        for (float v : batch[i]->pixels) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw Error(ErrorCategory::Geometry,
                            "gateway: image " + std::to_string(i) + " has values outside [0,1]");
            }
        }
    }
    if (config_.quota > 0) {
        // Claim quota before serving; leave the counter untouched on refusal.
        uint64_t cur = quota_used_.load();
        const uint64_t n = batch.size();
        while (true) {
            if (cur + n > config_.quota) {
                throw Error(ErrorCategory::Budget, "gateway: query quota exhausted");
            }
            if (quota_used_.compare_exchange_weak(cur, cur + n)) break;
        }
    }
    auto out = model_->predict_batch(batch);
    served_.fetch_add(batch.size());
    return out;
}

GatewayStats ModelGateway::stats() const {
    GatewayStats s;
    s.queries_served = served_.load();
    s.model_id = config_.model_id;
    s.uptime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return s;
}

std::shared_ptr<InProcessEndpoint> make_inprocess_endpoint(
    std::shared_ptr<const ClassifierHandle> model, std::string model_id) {
    GatewayConfig cfg;
    cfg.model_id = std::move(model_id);
    return std::make_shared<InProcessEndpoint>(
        std::make_shared<ModelGateway>(std::move(model), cfg));
}

struct GatewayServer::Impl {
    httplib::Server server;
    std::thread worker;
    std::mutex log_mutex;
    std::ofstream log;
};

GatewayServer::GatewayServer(std::shared_ptr<const ClassifierHandle> model, GatewayConfig config)
    : gateway_(std::make_shared<ModelGateway>(std::move(model), std::move(config))),
      impl_(std::make_unique<Impl>()) {}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start() {
    const GatewayConfig& cfg = gateway_->config();
    if (!cfg.access_log_path.empty()) {
        impl_->log.open(cfg.access_log_path, std::ios::app);
        if (!impl_->log) {
            throw Error(ErrorCategory::Config, "gateway: cannot open access log " +
                                                   cfg.access_log_path);
        }
    }

    auto log_request = [this](const std::string& method, const std::string& path, int status) {
        if (!impl_->log.is_open()) return;
        std::lock_guard<std::mutex> lock(impl_->log_mutex);
        impl_->log << method << " " << path << " " << status << "\n";
        impl_->log.flush();
    };

    impl_->server.Post("/v1/predict", [this, log_request](const httplib::Request& req,
                                                          httplib::Response& res) {
        int status = 200;
        json body;
        try {
            const json in = json::parse(req.body);
            const auto& shape = in.at("shape");
            if (!shape.is_array() || shape.size() != 3) {
                throw Error(ErrorCategory::Geometry, "shape must be [H,W,C]");
            }
            const int h = shape[0].get<int>();
            const int w = shape[1].get<int>();
            const int c = shape[2].get<int>();
            const auto& arrays = in.at("images");
            if (!arrays.is_array() || arrays.empty()) {
                throw Error(ErrorCategory::Geometry, "images must be a non-empty array");
            }
            std::vector<Image> images;
            images.reserve(arrays.size());
            for (size_t i = 0; i < arrays.size(); ++i) {
                const auto& a = arrays[i];
                if (!a.is_array() ||
                    a.size() != static_cast<size_t>(h) * static_cast<size_t>(w) * c) {
                    throw Error(ErrorCategory::Geometry,
                                "image " + std::to_string(i) + " has wrong length");
                }
                Image img(h, w, c);
                for (size_t j = 0; j < a.size(); ++j) img.pixels[j] = a[j].get<float>();
                images.push_back(std::move(img));
            }
            std::vector<const Image*> batch;
            batch.reserve(images.size());
            for (const Image& img : images) batch.push_back(&img);
            const std::string key = req.get_header_value("X-Api-Key");
            const auto confidences = gateway_->predict(batch, key);
            body["confidences"] = confidences;
        } catch (const Error& e) {
            switch (e.category()) {
                case ErrorCategory::Geometry: status = 400; break;
                case ErrorCategory::Budget: status = 429; break;
                case ErrorCategory::Endpoint: status = 413; break;
                default: status = 500; break;
            }
            body["error"] = e.what();
        } catch (const std::exception& e) {
            status = 400;
            body["error"] = std::string("bad request: ") + e.what();
        }
        res.status = status;
        res.set_content(body.dump(), "application/json");
        log_request("POST", "/v1/predict", status);
    });

    impl_->server.Get("/v1/stats", [this, log_request](const httplib::Request&,
                                                       httplib::Response& res) {
        const GatewayStats s = gateway_->stats();
        const Geometry g = gateway_->input_geometry();
        const json body{{"queries_served", s.queries_served},
                        {"model_id", s.model_id},
                        {"uptime_seconds", s.uptime_seconds},
                        {"num_classes", gateway_->num_classes()},
                        {"shape", {g.height, g.width, g.channels}}};
        res.status = 200;
        res.set_content(body.dump(), "application/json");
        log_request("GET", "/v1/stats", 200);
    });

    const GatewayConfig& gc = gateway_->config();
    if (gc.port == 0) {
        port_ = impl_->server.bind_to_any_port(gc.bind_address);
        if (port_ <= 0) throw Error(ErrorCategory::Endpoint, "gateway: failed to bind");
    } else {
        if (!impl_->server.bind_to_port(gc.bind_address, gc.port)) {
            throw Error(ErrorCategory::Endpoint,
                        "gateway: failed to bind port " + std::to_string(gc.port));
        }
        port_ = gc.port;
    }
    impl_->worker = std::thread([this]() { impl_->server.listen_after_bind(); });
    // Wait for the listener to come up before handing out the port.
    for (int i = 0; i < 200 && !impl_->server.is_running(); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return port_;
}

void GatewayServer::stop() {
    if (impl_ && impl_->worker.joinable()) {
        impl_->server.stop();
        impl_->worker.join();
    }
}

struct HttpEndpoint::Impl {
    std::string host;
    int port = 0;
    int max_retries = 3;
};

HttpEndpoint::HttpEndpoint(std::string host, int port, int max_retries)
    : impl_(std::make_unique<Impl>()) {
    impl_->host = std::move(host);
    impl_->port = port;
    impl_->max_retries = max_retries;
}

HttpEndpoint::~HttpEndpoint() = default;

void HttpEndpoint::set_metadata(Geometry geometry, int num_classes) {
    geometry_ = geometry;
    num_classes_ = num_classes;
}

namespace {

json fetch_stats(const std::string& host, int port) {
    httplib::Client client(host, port);
    client.set_read_timeout(30, 0);
    const auto res = client.Get("/v1/stats");
    if (!res || res->status != 200) {
        throw Error(ErrorCategory::Endpoint, "gateway stats unavailable at " + host + ":" +
                                                 std::to_string(port));
    }
    return json::parse(res->body);
}

}  // namespace

int HttpEndpoint::num_classes() const {
    if (num_classes_ < 0) {
        const json s = fetch_stats(impl_->host, impl_->port);
        num_classes_ = s.at("num_classes").get<int>();
        geometry_ = {s.at("shape")[0].get<int>(), s.at("shape")[1].get<int>(),
                     s.at("shape")[2].get<int>()};
    }
    return num_classes_;
}

Geometry HttpEndpoint::input_geometry() const {
    if (num_classes_ < 0) num_classes();
    return geometry_;
}

std::vector<std::vector<float>> HttpEndpoint::predict(const std::vector<const Image*>& batch) {
    if (batch.empty()) throw Error(ErrorCategory::Data, "http endpoint: empty batch");
    json req;
    const Geometry g = batch.front()->geometry;
    req["shape"] = {g.height, g.width, g.channels};
    json images = json::array();
    for (const Image* img : batch) {
        images.push_back(img->pixels);
    }
    req["images"] = std::move(images);
    const std::string body = req.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= impl_->max_retries; ++attempt) {
        httplib::Client client(impl_->host, impl_->port);
        client.set_read_timeout(120, 0);
        client.set_connection_timeout(10, 0);
        const auto res = client.Post("/v1/predict", body, "application/json");
        if (!res) {
            last_error = "connection failed";
            continue;  // transport failure is retryable
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(ErrorCategory::Endpoint,
                        "gateway rejected request (" + std::to_string(res->status) +
                            "): " + res->body);
        }
        const json out = json::parse(res->body);
        return out.at("confidences").get<std::vector<std::vector<float>>>();
    }
    throw Error(ErrorCategory::Endpoint,
                "gateway unreachable after " + std::to_string(impl_->max_retries + 1) +
                    " attempts: " + last_error);
}

}  // namespace bprom
