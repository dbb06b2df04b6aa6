#include "bprom/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "bprom/common.hpp"

namespace bprom {

double auroc(const ScoredPopulation& pop) {
    const size_t n = pop.scores.size();
    if (n != pop.labels.size()) {
        throw Error(ErrorCategory::Data, "auroc: score/label length mismatch");
    }
    long long n_pos = std::count(pop.labels.begin(), pop.labels.end(), 1);
    long long n_neg = static_cast<long long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error(ErrorCategory::Data, "auroc: both classes must be present");
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return pop.scores[a] < pop.scores[b]; });

    // Midranks over tie groups, then the rank-sum form of Mann-Whitney U.
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && pop.scores[order[j + 1]] == pop.scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    for (size_t k = 0; k < n; ++k) {
        if (pop.labels[k] == 1) pos_rank_sum += rank[k];
    }
    const double u = pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

F1Breakdown f1_score(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.size() != truths.size()) {
        throw Error(ErrorCategory::Data, "f1: prediction/truth length mismatch");
    }
    F1Breakdown out;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const bool p = predictions[i] == 1;
        const bool t = truths[i] == 1;
        out.tp += p && t;
        out.fp += p && !t;
        out.fn += !p && t;
        out.tn += !p && !t;
    }
    out.precision = out.tp + out.fp > 0 ? static_cast<double>(out.tp) / (out.tp + out.fp) : 0.0;
    out.recall = out.tp + out.fn > 0 ? static_cast<double>(out.tp) / (out.tp + out.fn) : 0.0;
    out.f1 = out.precision + out.recall > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

}  // namespace bprom
