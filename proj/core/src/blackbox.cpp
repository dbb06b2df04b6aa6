#include "bprom/blackbox.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "bprom/common.hpp"
#include "bprom/cmaes.hpp"
#include "bprom/rng.hpp"

namespace bprom {

bool QueryBudget::reserve(uint64_t n) {
    uint64_t cur = used_.load();
    while (cur + n <= max_) {
        if (used_.compare_exchange_weak(cur, cur + n)) return true;
    }
    return false;
}

void EsConfig::validate() const {
    if (lambda != 0 && lambda < 2) {
        throw Error(ErrorCategory::Config, "es: lambda must be >= 2");
    }
    if (iterations <= 0) throw Error(ErrorCategory::Config, "es: iterations must be positive");
    if (!(sigma0 > 0.0)) throw Error(ErrorCategory::Config, "es: sigma0 must be positive");
    if (fitness_batch <= 0) {
        throw Error(ErrorCategory::Config, "es: fitness batch must be positive");
    }
}

double prompt_fitness(Endpoint& endpoint, const VisualPrompt& prompt,
                      const std::vector<int>& label_map,
                      const std::vector<const Image*>& batch, const std::vector<int>& labels) {
    if (batch.size() != labels.size() || batch.empty()) {
        throw Error(ErrorCategory::Data, "fitness: bad batch");
    }
    std::vector<Image> padded;
    padded.reserve(batch.size());
    std::vector<const Image*> ptrs;
    ptrs.reserve(batch.size());
    for (const Image* img : batch) {
        padded.push_back(pad_with_prompt(*img, prompt));
        ptrs.push_back(&padded.back());
    }
    const auto confidences = endpoint.predict(ptrs);

    const size_t kt = label_map.size();
    double loss = 0.0;
    for (size_t i = 0; i < confidences.size(); ++i) {
        float sum = 0.0f;
        for (size_t j = 0; j < kt; ++j) sum += confidences[i][label_map[j]];
        const float py = confidences[i][label_map[labels[i]]];
        const double restricted =
            sum > 0.0f ? static_cast<double>(py) / sum : 1.0 / static_cast<double>(kt);
        loss -= std::log(std::max(restricted, 1e-12));
    }
    return loss / static_cast<double>(confidences.size());
}

BlackboxSearchResult train_prompt_blackbox(Endpoint& endpoint,
                                           const LabeledImageSet& target_train,
                                           const EsConfig& es, QueryBudget& budget,
                                           int inner_size, int jobs) {
    es.validate();
    if (target_train.empty()) {
        throw Error(ErrorCategory::Data, "blackbox prompt: empty target set");
    }
    const Geometry src = endpoint.input_geometry();
    if (src.height != src.width) {
        throw Error(ErrorCategory::Geometry, "blackbox prompt: source geometry must be square");
    }
    if (target_train.num_classes > endpoint.num_classes()) {
        throw Error(ErrorCategory::Config, "blackbox prompt: target classes exceed source");
    }
    const std::vector<int> label_map =
        identity_label_map(target_train.num_classes, endpoint.num_classes());

    // Fixed minibatch: every candidate in the whole search sees these samples.
    const size_t batch_n =
        std::min(static_cast<size_t>(es.fitness_batch), target_train.size());
    const auto batch_idx = sample_query_indices(target_train.size(), batch_n,
                                                mix_seed(es.seed, 0xba7c));
    std::vector<const Image*> batch(batch_n);
    std::vector<int> labels(batch_n);
    for (size_t i = 0; i < batch_n; ++i) {
        batch[i] = &target_train.images[batch_idx[i]];
        labels[i] = target_train.labels[batch_idx[i]];
    }

    VisualPrompt shape = VisualPrompt::zeros(src.height, inner_size, src.channels);
    const int dim = static_cast<int>(shape.param_count());

    CmaConfig cma_cfg;
    cma_cfg.dimension = dim;
    cma_cfg.lambda = es.lambda;
    cma_cfg.sigma0 = es.sigma0;
    cma_cfg.seed = mix_seed(es.seed, 0xc3a);
    CmaEs cma(cma_cfg);

    BlackboxSearchResult result;
    result.prompt = shape;

    auto theta_to_prompt = [&shape](const Eigen::VectorXd& x) {
        VisualPrompt p = shape;
        for (int i = 0; i < x.size(); ++i) p.theta[i] = static_cast<float>(x(i));
        return p;
    };

    const uint64_t per_generation =
        static_cast<uint64_t>(cma.lambda()) * static_cast<uint64_t>(batch_n);
    for (int gen = 0; gen < es.iterations; ++gen) {
        if (!budget.reserve(per_generation)) {
            result.truncated = true;
            break;
        }
        const auto& candidates = cma.ask();
        std::vector<double> fitnesses(candidates.size(), 0.0);

        const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(candidates.size())));
        if (workers == 1) {
            for (size_t i = 0; i < candidates.size(); ++i) {
                fitnesses[i] =
                    prompt_fitness(endpoint, theta_to_prompt(candidates[i]), label_map, batch,
                                   labels);
            }
        } else {
            std::atomic<size_t> next{0};
            std::vector<std::thread> pool;
            std::exception_ptr failure;
            std::mutex failure_mutex;
            for (int t = 0; t < workers; ++t) {
                pool.emplace_back([&]() {
                    for (size_t i = next.fetch_add(1); i < candidates.size();
                         i = next.fetch_add(1)) {
                        try {
                            fitnesses[i] = prompt_fitness(endpoint,
                                                          theta_to_prompt(candidates[i]),
                                                          label_map, batch, labels);
                        } catch (...) {
                            std::lock_guard<std::mutex> lock(failure_mutex);
                            if (!failure) failure = std::current_exception();
                        }
                    }
                });
            }
            for (auto& th : pool) th.join();
            if (failure) std::rethrow_exception(failure);
        }

        cma.tell(fitnesses);
        result.trace.push_back({gen, cma.best_fitness(), budget.used()});
    }

    if (cma.has_best()) {
        result.prompt = theta_to_prompt(cma.best_point());
        result.best_fitness = cma.best_fitness();
    } else {
        // Budget could not cover even one generation; report the untouched
        // center prompt.
        result.best_fitness = std::numeric_limits<double>::infinity();
        result.truncated = true;
    }
    result.queries_used = budget.used();
    result.prompt.validate();
    return result;
}

void write_trace_csv(const std::vector<SearchTracePoint>& trace, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCategory::Data, "cannot write trace: " + path);
    f << "iteration,best_fitness,queries_used\n";
    for (const auto& p : trace) {
        f << p.iteration << "," << p.best_fitness << "," << p.queries_used << "\n";
    }
}

}  // namespace bprom
