#pragma once

#include <string>
#include <vector>

namespace bprom {

struct ScoredPopulation {
    std::vector<double> scores;
    std::vector<int> labels;  // 0 = negative/clean, 1 = positive/backdoor
    std::string provenance;
};

// Mann-Whitney pair statistic: P(score_pos > score_neg), ties counted 1/2.
// Computed by ranking, O(n log n). Requires both classes present.
double auroc(const ScoredPopulation& pop);

struct F1Breakdown {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long tp = 0, fp = 0, fn = 0, tn = 0;
};

// positive class = 1 (backdoor). P or R with a zero denominator is 0; F1 is 0
// when P + R == 0.
F1Breakdown f1_score(const std::vector<int>& predictions, const std::vector<int>& truths);

}  // namespace bprom
