#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace bprom {

struct ForestConfig {
    int n_trees = 1000;
    int max_depth = 0;  // 0 = grow until pure or min_leaf
    int min_leaf = 1;
    int mtry = 0;  // features per split; 0 = ceil(sqrt(d))
    uint64_t seed = 0;
};

// Binary random forest (CART, gini, bootstrap rows, feature subsampling).
// Deterministic under the config seed. score() is the fraction of trees
// voting class 1.
class RandomForest {
public:
    static RandomForest fit(const std::vector<std::vector<float>>& rows,
                            const std::vector<int>& labels, const ForestConfig& config);

    double score(const std::vector<float>& row) const;
    int predict(const std::vector<float>& row, double threshold = 0.5) const {
        return score(row) >= threshold ? 1 : 0;
    }

    const ForestConfig& config() const { return config_; }
    size_t dimension() const { return dimension_; }

    void save(std::ostream& out) const;
    static RandomForest load(std::istream& in);

private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        float threshold = 0.0f;
        int left = -1;
        int right = -1;
        uint8_t vote = 0;
    };

    ForestConfig config_;
    size_t dimension_ = 0;
    std::vector<std::vector<Node>> trees_;
};

}  // namespace bprom
