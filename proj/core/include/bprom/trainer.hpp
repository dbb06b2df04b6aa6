#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bprom/dataset.hpp"
#include "bprom/nets.hpp"
#include "bprom/trigger.hpp"

namespace bprom {

struct TrainConfig {
    int epochs = 15;
    int batch_size = 32;
    float lr = 0.05f;
    float momentum = 0.9f;
    float weight_decay = 1e-4f;
    // Learning rate is multiplied by this factor for the last quarter of
    // training.
    float final_lr_factor = 0.1f;
};

struct TrainMeta {
    int epochs = 0;
    uint64_t seed = 0;
    double final_train_accuracy = 0.0;
    double final_train_loss = 0.0;
};

// A trained classifier plus its training metadata. Confidence vectors from
// predict() are probability-simplex points.
class ClassifierHandle {
public:
    ClassifierHandle(ConvNet net, TrainMeta meta) : net_(std::move(net)), meta_(meta) {}

    std::vector<float> predict(const Image& img) const { return net_.predict(img); }
    std::vector<std::vector<float>> predict_batch(const std::vector<const Image*>& batch) const {
        return net_.predict_batch(batch);
    }

    const ArchConfig& arch() const { return net_.arch(); }
    Geometry input_geometry() const { return net_.arch().input; }
    int num_classes() const { return net_.arch().num_classes; }
    const TrainMeta& meta() const { return meta_; }
    uint64_t params_hash() const { return net_.params_hash(); }
    const ConvNet& net() const { return net_; }

    void save(const std::string& path) const;
    static ClassifierHandle load(const std::string& path);

private:
    ConvNet net_;
    TrainMeta meta_;
};

// Standard supervised training, deterministic under seed. Throws
// ErrorCategory::Training with the epoch index if the loss goes non-finite.
ClassifierHandle train_classifier(const LabeledImageSet& data, const ArchConfig& arch,
                                  const TrainConfig& cfg, uint64_t seed);

// Top-1 accuracy; argmax ties resolved toward the lowest class index.
double accuracy(const ClassifierHandle& model, const LabeledImageSet& data);

// Fraction of non-target-class samples whose triggered version is predicted
// as the target class.
double measure_asr(const ClassifierHandle& model, const LabeledImageSet& clean_test,
                   const TriggerSpec& spec);

size_t argmax_lowest(const std::vector<float>& v);

}  // namespace bprom
