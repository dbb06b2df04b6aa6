#include "bprom/trainer.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bprom/common.hpp"
#include "bprom/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bprom {

size_t argmax_lowest(const std::vector<float>& v) {
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

ClassifierHandle train_classifier(const LabeledImageSet& data, const ArchConfig& arch,
                                  const TrainConfig& cfg, uint64_t seed) {
    if (data.empty()) throw Error(ErrorCategory::Data, "train: empty dataset");
    if (arch.num_classes != data.num_classes) {
        throw Error(ErrorCategory::Config, "train: arch classes " +
                                               std::to_string(arch.num_classes) +
                                               " != data classes " +
                                               std::to_string(data.num_classes));
    }
    if (arch.input != data.geometry()) {
        throw Error(ErrorCategory::Config, "train: arch geometry " + to_string(arch.input) +
                                               " != data geometry " +
                                               to_string(data.geometry()));
    }

    ConvNet net(arch, mix_seed(seed, 0xa11c));
    Rng shuffle_rng(mix_seed(seed, 0x5f1e));
    const size_t n = data.size();

    TrainMeta meta;
    meta.seed = seed;
    meta.epochs = cfg.epochs;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float lr =
            epoch >= cfg.epochs - cfg.epochs / 4 ? cfg.lr * cfg.final_lr_factor : cfg.lr;
        std::vector<size_t> order = shuffle_rng.permutation(n);
        double loss_sum = 0.0;
        long long correct = 0;
        size_t pos = 0;
        while (pos < n) {
            const size_t take = std::min(static_cast<size_t>(cfg.batch_size), n - pos);
            std::vector<const Image*> batch(take);
            std::vector<int> labels(take);
            for (size_t i = 0; i < take; ++i) {
                batch[i] = &data.images[order[pos + i]];
                labels[i] = data.labels[order[pos + i]];
            }
            try {
                const auto stats = net.sgd_step(batch, labels, lr, cfg.momentum, cfg.weight_decay);
                loss_sum += stats.loss * static_cast<double>(take);
                correct += stats.correct;
            } catch (const Error& e) {
                if (e.category() == ErrorCategory::Training) {
                    throw Error(ErrorCategory::Training,
                                "training diverged at epoch " + std::to_string(epoch) + ": " +
                                    e.what());
                }
                throw;
            }
            pos += take;
        }
        meta.final_train_loss = loss_sum / static_cast<double>(n);
        meta.final_train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    return {std::move(net), meta};
}

double accuracy(const ClassifierHandle& model, const LabeledImageSet& data) {
    if (data.empty()) throw Error(ErrorCategory::Data, "accuracy: empty dataset");
    long long correct = 0;
    constexpr size_t kChunk = 128;
    for (size_t pos = 0; pos < data.size(); pos += kChunk) {
        const size_t take = std::min(kChunk, data.size() - pos);
        std::vector<const Image*> batch(take);
        for (size_t i = 0; i < take; ++i) batch[i] = &data.images[pos + i];
        const auto probs = model.predict_batch(batch);
        for (size_t i = 0; i < take; ++i) {
            correct += argmax_lowest(probs[i]) == static_cast<size_t>(data.labels[pos + i]);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double measure_asr(const ClassifierHandle& model, const LabeledImageSet& clean_test,
                   const TriggerSpec& spec) {
    spec.validate(clean_test.geometry(), clean_test.num_classes);
    std::vector<Image> triggered;
    triggered.reserve(clean_test.size());
    for (size_t i = 0; i < clean_test.size(); ++i) {
        if (clean_test.labels[i] == spec.target_class) continue;
        triggered.push_back(apply_trigger(clean_test.images[i], spec));
    }
    if (triggered.empty()) {
        throw Error(ErrorCategory::Data, "asr: no samples outside the target class");
    }
    long long hits = 0;
    constexpr size_t kChunk = 128;
    for (size_t pos = 0; pos < triggered.size(); pos += kChunk) {
        const size_t take = std::min(kChunk, triggered.size() - pos);
        std::vector<const Image*> batch(take);
        for (size_t i = 0; i < take; ++i) batch[i] = &triggered[pos + i];
        const auto probs = model.predict_batch(batch);
        for (const auto& p : probs) {
            hits += argmax_lowest(p) == static_cast<size_t>(spec.target_class);
        }
    }
    return static_cast<double>(hits) / static_cast<double>(triggered.size());
}

void ClassifierHandle::save(const std::string& path) const {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::Data, "cannot open model file for write: " + path);
    net_.save(f);
    json j{{"epochs", meta_.epochs},
           {"seed", meta_.seed},
           {"final_train_accuracy", meta_.final_train_accuracy},
           {"final_train_loss", meta_.final_train_loss}};
    const std::string meta = j.dump();
    const auto len = static_cast<uint32_t>(meta.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!f) throw Error(ErrorCategory::Data, "short model write: " + path);
}

ClassifierHandle ClassifierHandle::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::Data, "missing model file: " + path);
    ConvNet net = ConvNet::load(f);
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string buf(len, '\0');
    f.read(buf.data(), len);
    if (!f) throw Error(ErrorCategory::Data, "truncated model file: " + path);
    const json j = json::parse(buf);
    TrainMeta meta;
    meta.epochs = j.at("epochs").get<int>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.final_train_accuracy = j.at("final_train_accuracy").get<double>();
    meta.final_train_loss = j.at("final_train_loss").get<double>();
    return {std::move(net), meta};
}

}  // namespace bprom
