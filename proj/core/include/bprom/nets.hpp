#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bprom/image.hpp"

namespace bprom {

// Desk-scale architectures. "conv3" is three conv3x3/relu/maxpool blocks and
// a linear head (input sides must be divisible by 8); "linear" is a flat
// softmax regression, used as a cheap surrogate in tests.
struct ArchConfig {
    std::string kind = "conv3";
    int width1 = 16;
    int width2 = 32;
    int width3 = 64;
    Geometry input;
    int num_classes = 0;

    bool operator==(const ArchConfig&) const = default;
};

class ConvNet {
public:
    ConvNet(const ArchConfig& arch, uint64_t init_seed);

    const ArchConfig& arch() const { return arch_; }

    // Row b of the result holds the logits of batch[b].
    Eigen::MatrixXf logits(const std::vector<const Image*>& batch) const;

    // Softmax confidence vector (length num_classes, sums to 1).
    std::vector<float> predict(const Image& img) const;
    std::vector<std::vector<float>> predict_batch(const std::vector<const Image*>& batch) const;

    struct StepStats {
        double loss = 0.0;
        long long correct = 0;
    };

    // One SGD-with-momentum step on softmax cross-entropy.
    StepStats sgd_step(const std::vector<const Image*>& batch, const std::vector<int>& labels,
                       float lr, float momentum, float weight_decay);

    // Mean cross-entropy over logits restricted to `label_map` (target class
    // j scored against source class label_map[j]) and its gradient with
    // respect to the input pixels. Leaves parameters untouched.
    double input_gradient(const std::vector<const Image*>& batch,
                          const std::vector<int>& target_labels,
                          const std::vector<int>& label_map, std::vector<Image>* grads) const;

    uint64_t params_hash() const;
    size_t param_count() const;

    void save(std::ostream& out) const;
    static ConvNet load(std::istream& in);

private:
    struct Cache;
    ConvNet() = default;

    void forward(const std::vector<const Image*>& batch, Cache& cache) const;
    void check_batch(const std::vector<const Image*>& batch) const;

    ArchConfig arch_;
    // conv weights are (9 * c_in, c_out); the head is (flat_dim, classes).
    std::vector<Eigen::MatrixXf> weights_;
    std::vector<Eigen::VectorXf> biases_;
    std::vector<Eigen::MatrixXf> w_momentum_;
    std::vector<Eigen::VectorXf> b_momentum_;
};

Eigen::MatrixXf softmax_rows(const Eigen::MatrixXf& logits);

}  // namespace bprom
