#include "bprom/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bprom/common.hpp"
#include "bprom/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bprom {

void VisualPrompt::validate() const {
    if (inner_size <= 0 || source_size <= 0 || inner_size >= source_size) {
        throw Error(ErrorCategory::Config,
                    "prompt: need 0 < inner_size < source_size, got " +
                        std::to_string(inner_size) + "/" + std::to_string(source_size));
    }
    if (theta.size() != param_count()) {
        throw Error(ErrorCategory::Config,
                    "prompt: theta has " + std::to_string(theta.size()) + " values, expected " +
                        std::to_string(param_count()));
    }
    if (interpolation != "bilinear") {
        throw Error(ErrorCategory::Config, "prompt: unsupported interpolation " + interpolation);
    }
    for (float v : theta) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw Error(ErrorCategory::Config, "prompt: theta outside [0,1]");
        }
    }
}

VisualPrompt VisualPrompt::zeros(int source_size, int inner_size, int channels) {
    VisualPrompt p;
    p.source_size = source_size;
    p.inner_size = inner_size;
    p.channels = channels;
    p.theta.assign(p.param_count(), 0.0f);
    p.validate();
    return p;
}

VisualPrompt VisualPrompt::random_init(int source_size, int inner_size, int channels,
                                       uint64_t seed) {
    VisualPrompt p = zeros(source_size, inner_size, channels);
    Rng rng(seed);
    for (float& v : p.theta) v = static_cast<float>(rng.uniform());
    return p;
}

namespace {

// Iterates the frame positions in theta order.
template <typename Fn>
void for_each_frame_pixel(const VisualPrompt& p, Fn&& fn) {
    const int off = p.border_offset();
    size_t t = 0;
    for (int y = 0; y < p.source_size; ++y) {
        for (int x = 0; x < p.source_size; ++x) {
            const bool inside = y >= off && y < off + p.inner_size && x >= off &&
                                x < off + p.inner_size;
            if (inside) continue;
            for (int c = 0; c < p.channels; ++c) fn(y, x, c, t++);
        }
    }
}

}  // namespace

Image pad_with_prompt(const Image& target_image, const VisualPrompt& prompt) {
    prompt.validate();
    if (target_image.geometry.channels != prompt.channels) {
        throw Error(ErrorCategory::Geometry,
                    "pad_with_prompt: channel mismatch " +
                        std::to_string(target_image.geometry.channels) + " vs " +
                        std::to_string(prompt.channels));
    }
    Image out(prompt.source_size, prompt.source_size, prompt.channels);
    const Image inner = resize_bilinear(target_image, prompt.inner_size, prompt.inner_size);
    const int off = prompt.border_offset();
    for (int y = 0; y < prompt.inner_size; ++y) {
        for (int x = 0; x < prompt.inner_size; ++x) {
            for (int c = 0; c < prompt.channels; ++c) {
                out.at(off + y, off + x, c) = inner.at(y, x, c);
            }
        }
    }
    for_each_frame_pixel(prompt, [&](int y, int x, int c, size_t t) {
        out.at(y, x, c) = prompt.theta[t];
    });
    return out;
}

Image prompt_to_canvas(const VisualPrompt& prompt, float fill) {
    prompt.validate();
    Image canvas(prompt.source_size, prompt.source_size, prompt.channels, fill);
    for_each_frame_pixel(prompt, [&](int y, int x, int c, size_t t) {
        canvas.at(y, x, c) = prompt.theta[t];
    });
    return canvas;
}

VisualPrompt prompt_from_canvas(const Image& canvas, int inner_size) {
    if (canvas.geometry.height != canvas.geometry.width) {
        throw Error(ErrorCategory::Geometry, "prompt canvas must be square");
    }
    VisualPrompt p = VisualPrompt::zeros(canvas.geometry.height, inner_size,
                                         canvas.geometry.channels);
    for_each_frame_pixel(p, [&](int y, int x, int c, size_t t) {
        p.theta[t] = canvas.at(y, x, c);
    });
    p.validate();
    return p;
}

void save_prompt(const VisualPrompt& prompt, const std::string& dir) {
    fs::create_directories(dir);
    write_pfm((fs::path(dir) / "prompt.pfm").string(), prompt_to_canvas(prompt));
    json j{{"source_size", prompt.source_size},
           {"inner_size", prompt.inner_size},
           {"channels", prompt.channels},
           {"interpolation", prompt.interpolation}};
    std::ofstream f(fs::path(dir) / "prompt.json");
    f << j.dump(2) << "\n";
    if (!f) throw Error(ErrorCategory::Data, "failed to write prompt descriptor in " + dir);
}

VisualPrompt load_prompt(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "prompt.json");
    if (!f) throw Error(ErrorCategory::Data, "missing prompt.json in " + dir);
    const json j = json::parse(f);
    const Image canvas = read_pfm((fs::path(dir) / "prompt.pfm").string());
    VisualPrompt p = prompt_from_canvas(canvas, j.at("inner_size").get<int>());
    p.interpolation = j.at("interpolation").get<std::string>();
    p.validate();
    return p;
}

std::vector<int> identity_label_map(int target_classes, int source_classes) {
    if (target_classes > source_classes) {
        throw Error(ErrorCategory::Config,
                    "label map: target classes " + std::to_string(target_classes) +
                        " exceed source classes " + std::to_string(source_classes));
    }
    std::vector<int> map(target_classes);
    for (int i = 0; i < target_classes; ++i) map[i] = i;
    return map;
}

void PromptedModel::validate() const {
    if (!base) throw Error(ErrorCategory::Config, "prompted model: missing base endpoint");
    prompt.validate();
    if (label_map.empty() || static_cast<int>(label_map.size()) > base->num_classes()) {
        throw Error(ErrorCategory::Config, "prompted model: label map size invalid");
    }
    std::vector<int> seen = label_map;
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end()) {
        throw Error(ErrorCategory::Config, "prompted model: label map must be injective");
    }
    for (int v : label_map) {
        if (v < 0 || v >= base->num_classes()) {
            throw Error(ErrorCategory::Config, "prompted model: label map entry out of range");
        }
    }
}

std::vector<std::vector<float>> prompted_source_confidences(
    PromptedModel& pm, const std::vector<const Image*>& batch) {
    pm.validate();
    std::vector<Image> padded;
    padded.reserve(batch.size());
    std::vector<const Image*> ptrs;
    ptrs.reserve(batch.size());
    for (const Image* img : batch) {
        padded.push_back(pad_with_prompt(*img, pm.prompt));
        ptrs.push_back(&padded.back());
    }
    return pm.base->predict(ptrs);
}

std::vector<std::vector<float>> prompted_predict(PromptedModel& pm,
                                                 const std::vector<const Image*>& batch) {
    auto source = prompted_source_confidences(pm, batch);
    std::vector<std::vector<float>> out(source.size());
    const size_t kt = pm.label_map.size();
    for (size_t i = 0; i < source.size(); ++i) {
        out[i].resize(kt);
        float sum = 0.0f;
        for (size_t j = 0; j < kt; ++j) {
            out[i][j] = source[i][pm.label_map[j]];
            sum += out[i][j];
        }
        if (sum > 0.0f) {
            for (float& v : out[i]) v /= sum;
        } else {
            std::fill(out[i].begin(), out[i].end(), 1.0f / static_cast<float>(kt));
        }
    }
    return out;
}

double prompted_accuracy(PromptedModel& pm, const LabeledImageSet& target_test) {
    if (target_test.empty()) throw Error(ErrorCategory::Data, "prompted_accuracy: empty set");
    long long correct = 0;
    constexpr size_t kChunk = 128;
    for (size_t pos = 0; pos < target_test.size(); pos += kChunk) {
        const size_t take = std::min(kChunk, target_test.size() - pos);
        std::vector<const Image*> batch(take);
        for (size_t i = 0; i < take; ++i) batch[i] = &target_test.images[pos + i];
        const auto probs = prompted_predict(pm, batch);
        for (size_t i = 0; i < take; ++i) {
            correct +=
                argmax_lowest(probs[i]) == static_cast<size_t>(target_test.labels[pos + i]);
        }
    }
    return static_cast<double>(correct) / static_cast<double>(target_test.size());
}

PromptTrainResult train_prompt_whitebox(const ClassifierHandle& model,
                                        const LabeledImageSet& target_train,
                                        const PromptOptConfig& cfg, uint64_t seed,
                                        int inner_size) {
    if (target_train.empty()) {
        throw Error(ErrorCategory::Data, "prompt training: empty target set");
    }
    const Geometry src = model.input_geometry();
    if (src.height != src.width) {
        throw Error(ErrorCategory::Geometry, "prompt training: source geometry must be square");
    }
    if (target_train.num_classes > model.num_classes()) {
        throw Error(ErrorCategory::Config,
                    "prompt training: target classes " +
                        std::to_string(target_train.num_classes) + " exceed source classes " +
                        std::to_string(model.num_classes()));
    }
    const std::vector<int> label_map =
        identity_label_map(target_train.num_classes, model.num_classes());

    VisualPrompt prompt =
        VisualPrompt::random_init(src.height, inner_size, src.channels, mix_seed(seed, 0x9a0));
    std::vector<float> velocity(prompt.theta.size(), 0.0f);

    // Resized centers are fixed; cache them and rewrite only the frame.
    std::vector<Image> padded;
    padded.reserve(target_train.size());
    for (const Image& img : target_train.images) padded.push_back(pad_with_prompt(img, prompt));

    const int off = prompt.border_offset();
    auto refresh_frame = [&](Image& canvas) {
        size_t t = 0;
        for (int y = 0; y < prompt.source_size; ++y) {
            for (int x = 0; x < prompt.source_size; ++x) {
                const bool inside = y >= off && y < off + prompt.inner_size && x >= off &&
                                    x < off + prompt.inner_size;
                if (inside) continue;
                for (int c = 0; c < prompt.channels; ++c) {
                    canvas.at(y, x, c) = prompt.theta[t++];
                }
            }
        }
    };

    Rng shuffle_rng(mix_seed(seed, 0x5481));
    const size_t n = target_train.size();
    PromptTrainResult result;
    std::vector<Image> grads;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = shuffle_rng.permutation(n);
        double loss_sum = 0.0;
        size_t pos = 0;
        while (pos < n) {
            const size_t take = std::min(static_cast<size_t>(cfg.batch_size), n - pos);
            std::vector<const Image*> batch(take);
            std::vector<int> labels(take);
            for (size_t i = 0; i < take; ++i) {
                Image& canvas = padded[order[pos + i]];
                refresh_frame(canvas);
                batch[i] = &canvas;
                labels[i] = target_train.labels[order[pos + i]];
            }
            const double loss = model.net().input_gradient(batch, labels, label_map, &grads);
            if (!std::isfinite(loss)) {
                throw Error(ErrorCategory::Training,
                            "prompt training diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += loss * static_cast<double>(take);

            size_t t = 0;
            for (int y = 0; y < prompt.source_size; ++y) {
                for (int x = 0; x < prompt.source_size; ++x) {
                    const bool inside = y >= off && y < off + prompt.inner_size && x >= off &&
                                        x < off + prompt.inner_size;
                    if (inside) continue;
                    for (int c = 0; c < prompt.channels; ++c) {
                        float g = 0.0f;
                        for (const Image& gi : grads) g += gi.at(y, x, c);
                        velocity[t] = cfg.momentum * velocity[t] - cfg.lr * g;
                        prompt.theta[t] = std::clamp(prompt.theta[t] + velocity[t], 0.0f, 1.0f);
                        ++t;
                    }
                }
            }
            pos += take;
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(n));
    }
    prompt.validate();
    result.prompt = std::move(prompt);
    return result;
}

}  // namespace bprom
