#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "bprom/dataset.hpp"
#include "bprom/endpoint.hpp"
#include "bprom/prompt.hpp"

namespace bprom {

// Query accounting for one detection run. `used` is monotone and never
// exceeds `max_queries`; reserve() is the only way to consume.
class QueryBudget {
public:
    explicit QueryBudget(uint64_t max_queries) : max_(max_queries) {}

    uint64_t max_queries() const { return max_; }
    uint64_t used() const { return used_.load(); }
    uint64_t remaining() const { return max_ - used_.load(); }

    // Atomically claims `n` queries; returns false (claiming nothing) when
    // the budget cannot cover them.
    bool reserve(uint64_t n);

private:
    uint64_t max_;
    std::atomic<uint64_t> used_{0};
};

struct EsConfig {
    int lambda = 0;  // 0 selects 4 + floor(3 ln d)
    int iterations = 300;
    double sigma0 = 0.1;
    int fitness_batch = 64;
    uint64_t seed = 0;

    void validate() const;
};

struct SearchTracePoint {
    long long iteration = 0;
    double best_fitness = 0.0;
    uint64_t queries_used = 0;
};

struct BlackboxSearchResult {
    VisualPrompt prompt;
    double best_fitness = 0.0;
    std::vector<SearchTracePoint> trace;
    bool truncated = false;  // budget ran out before the iteration cap
    uint64_t queries_used = 0;
};

// Mean cross-entropy of the label-mapped endpoint confidences over `batch`
// with prompt theta. One endpoint call per evaluation.
double prompt_fitness(Endpoint& endpoint, const VisualPrompt& prompt,
                      const std::vector<int>& label_map,
                      const std::vector<const Image*>& batch,
                      const std::vector<int>& labels);

// CMA-ES over the flattened prompt; candidates are clipped into [0,1] before
// evaluation. Fitness uses one fixed seeded minibatch of target_train so
// candidate comparisons stay fair. Terminates at the iteration cap or when
// the budget cannot cover another full generation. `jobs` bounds concurrent
// candidate evaluations (results are identical for any jobs >= 1).
BlackboxSearchResult train_prompt_blackbox(Endpoint& endpoint,
                                           const LabeledImageSet& target_train,
                                           const EsConfig& es, QueryBudget& budget,
                                           int inner_size, int jobs = 1);

void write_trace_csv(const std::vector<SearchTracePoint>& trace, const std::string& path);

}  // namespace bprom
