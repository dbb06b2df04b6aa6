#include "bprom/forest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "bprom/common.hpp"
#include "bprom/rng.hpp"

namespace bprom {

namespace {

constexpr uint32_t kForestMagic = 0x54465042;  // "BPFT"

}  // namespace

RandomForest RandomForest::fit(const std::vector<std::vector<float>>& rows,
                               const std::vector<int>& labels, const ForestConfig& config) {
    if (rows.empty() || rows.size() != labels.size()) {
        throw Error(ErrorCategory::Data, "forest: need matching non-empty rows/labels");
    }
    const size_t d = rows.front().size();
    for (const auto& r : rows) {
        if (r.size() != d) throw Error(ErrorCategory::Data, "forest: ragged feature rows");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw Error(ErrorCategory::Data, "forest: labels must be 0/1");
    }
    if (config.n_trees <= 0) throw Error(ErrorCategory::Config, "forest: n_trees must be > 0");

    RandomForest forest;
    forest.config_ = config;
    forest.dimension_ = d;
    const int mtry = config.mtry > 0
                         ? config.mtry
                         : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));

    forest.trees_.resize(config.n_trees);
    for (int t = 0; t < config.n_trees; ++t) {
        Rng rng(mix_seed(config.seed, static_cast<uint64_t>(t)));
        // Bootstrap sample.
        std::vector<int> sample(rows.size());
        for (auto& s : sample) s = static_cast<int>(rng.below(rows.size()));

        std::vector<Node>& nodes = forest.trees_[t];

        // Iterative CART growth; each frame owns its row subset.
        struct Frame {
            std::vector<int> idx;
            int node = 0;
            int depth = 0;
        };
        nodes.push_back({});
        std::vector<Frame> stack;
        stack.push_back({std::move(sample), 0, 0});

        std::vector<int> features(d);
        for (size_t j = 0; j < d; ++j) features[j] = static_cast<int>(j);

        while (!stack.empty()) {
            Frame frame = std::move(stack.back());
            stack.pop_back();

            int pos = 0;
            for (int i : frame.idx) pos += labels[i];
            const int n = static_cast<int>(frame.idx.size());

            auto make_leaf = [&]() {
                nodes[frame.node].feature = -1;
                nodes[frame.node].vote = 2 * pos >= n ? 1 : 0;
            };

            if (pos == 0 || pos == n || n <= config.min_leaf ||
                (config.max_depth > 0 && frame.depth >= config.max_depth)) {
                make_leaf();
                continue;
            }

            // Evaluate gini on mtry sampled features.
            std::vector<int> pool = features;
            rng.shuffle(pool);
            const int tries = std::min<int>(mtry, static_cast<int>(d));

            double best_gain = 0.0;
            int best_feature = -1;
            float best_threshold = 0.0f;
            const double parent =
                1.0 - std::pow(static_cast<double>(pos) / n, 2) -
                std::pow(static_cast<double>(n - pos) / n, 2);

            std::vector<std::pair<float, int>> vals(n);
            for (int f = 0; f < tries; ++f) {
                const int feature = pool[f];
                for (int i = 0; i < n; ++i) {
                    vals[i] = {rows[frame.idx[i]][feature], labels[frame.idx[i]]};
                }
                std::sort(vals.begin(), vals.end());
                int left_n = 0, left_pos = 0;
                for (int i = 0; i + 1 < n; ++i) {
                    ++left_n;
                    left_pos += vals[i].second;
                    if (vals[i].first == vals[i + 1].first) continue;
                    const int right_n = n - left_n;
                    const int right_pos = pos - left_pos;
                    const double gl =
                        1.0 - std::pow(static_cast<double>(left_pos) / left_n, 2) -
                        std::pow(static_cast<double>(left_n - left_pos) / left_n, 2);
                    const double gr =
                        1.0 - std::pow(static_cast<double>(right_pos) / right_n, 2) -
                        std::pow(static_cast<double>(right_n - right_pos) / right_n, 2);
                    const double gain =
                        parent - (left_n * gl + right_n * gr) / static_cast<double>(n);
                    if (gain > best_gain + 1e-12) {
                        best_gain = gain;
                        best_feature = feature;
                        best_threshold = 0.5f * (vals[i].first + vals[i + 1].first);
                    }
                }
            }

            if (best_feature < 0) {
                make_leaf();
                continue;
            }

            std::vector<int> left_idx, right_idx;
            for (int i : frame.idx) {
                (rows[i][best_feature] <= best_threshold ? left_idx : right_idx).push_back(i);
            }
            if (left_idx.empty() || right_idx.empty()) {
                make_leaf();
                continue;
            }

            nodes[frame.node].feature = best_feature;
            nodes[frame.node].threshold = best_threshold;
            nodes[frame.node].left = static_cast<int>(nodes.size());
            nodes.push_back({});
            nodes[frame.node].right = static_cast<int>(nodes.size());
            nodes.push_back({});
            stack.push_back({std::move(right_idx), nodes[frame.node].right, frame.depth + 1});
            stack.push_back({std::move(left_idx), nodes[frame.node].left, frame.depth + 1});
        }
    }
    return forest;
}

double RandomForest::score(const std::vector<float>& row) const {
    if (row.size() != dimension_) {
        throw Error(ErrorCategory::Data, "forest: feature vector has length " +
                                             std::to_string(row.size()) + ", expected " +
                                             std::to_string(dimension_));
    }
    long long votes = 0;
    for (const auto& nodes : trees_) {
        int cur = 0;
        while (nodes[cur].feature >= 0) {
            cur = row[nodes[cur].feature] <= nodes[cur].threshold ? nodes[cur].left
                                                                  : nodes[cur].right;
        }
        votes += nodes[cur].vote;
    }
    return static_cast<double>(votes) / static_cast<double>(trees_.size());
}

void RandomForest::save(std::ostream& out) const {
    auto put_u32 = [&out](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&out](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kForestMagic);
    put_u32(1);
    put_u32(static_cast<uint32_t>(config_.n_trees));
    put_u32(static_cast<uint32_t>(config_.max_depth));
    put_u32(static_cast<uint32_t>(config_.min_leaf));
    put_u32(static_cast<uint32_t>(config_.mtry));
    put_u64(config_.seed);
    put_u64(dimension_);
    for (const auto& nodes : trees_) {
        put_u32(static_cast<uint32_t>(nodes.size()));
        for (const Node& n : nodes) {
            out.write(reinterpret_cast<const char*>(&n.feature), 4);
            out.write(reinterpret_cast<const char*>(&n.threshold), 4);
            out.write(reinterpret_cast<const char*>(&n.left), 4);
            out.write(reinterpret_cast<const char*>(&n.right), 4);
            out.write(reinterpret_cast<const char*>(&n.vote), 1);
        }
    }
    if (!out) throw Error(ErrorCategory::Data, "forest serialization failed");
}

RandomForest RandomForest::load(std::istream& in) {
    auto get_u32 = [&in]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&in]() {
        uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_u32() != kForestMagic) throw Error(ErrorCategory::Data, "not a forest file");
    if (get_u32() != 1) throw Error(ErrorCategory::Data, "unsupported forest version");
    RandomForest forest;
    forest.config_.n_trees = static_cast<int>(get_u32());
    forest.config_.max_depth = static_cast<int>(get_u32());
    forest.config_.min_leaf = static_cast<int>(get_u32());
    forest.config_.mtry = static_cast<int>(get_u32());
    forest.config_.seed = get_u64();
    forest.dimension_ = get_u64();
    forest.trees_.resize(forest.config_.n_trees);
    for (auto& nodes : forest.trees_) {
        nodes.resize(get_u32());
        for (Node& n : nodes) {
            in.read(reinterpret_cast<char*>(&n.feature), 4);
            in.read(reinterpret_cast<char*>(&n.threshold), 4);
            in.read(reinterpret_cast<char*>(&n.left), 4);
            in.read(reinterpret_cast<char*>(&n.right), 4);
            in.read(reinterpret_cast<char*>(&n.vote), 1);
        }
    }
    if (!in) throw Error(ErrorCategory::Data, "truncated forest file");
    return forest;
}

}  // namespace bprom
