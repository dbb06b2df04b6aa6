#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bprom/dataset.hpp"
#include "bprom/endpoint.hpp"
#include "bprom/image.hpp"
#include "bprom/trainer.hpp"

namespace bprom {

// Trainable border of a resize-and-pad prompt. theta covers exactly the
// frame pixels of the source-geometry canvas (row-major scan skipping the
// centered inner box, channels innermost), values kept in [0,1] by
// projection after every update.
struct VisualPrompt {
    std::vector<float> theta;
    int source_size = 32;
    int inner_size = 24;
    int channels = 3;
    std::string interpolation = "bilinear";

    size_t param_count() const {
        return static_cast<size_t>(source_size) * source_size * channels -
               static_cast<size_t>(inner_size) * inner_size * channels;
    }
    int border_offset() const { return (source_size - inner_size) / 2; }
    void validate() const;

    static VisualPrompt zeros(int source_size, int inner_size, int channels);
    static VisualPrompt random_init(int source_size, int inner_size, int channels, uint64_t seed);
};

// Resize the target image to the inner size and surround it with theta.
Image pad_with_prompt(const Image& target_image, const VisualPrompt& prompt);

// Writes theta into a source-size canvas at the frame positions (center
// left at `fill`); inverse of extract_frame.
Image prompt_to_canvas(const VisualPrompt& prompt, float fill = 0.0f);
VisualPrompt prompt_from_canvas(const Image& canvas, int inner_size);

void save_prompt(const VisualPrompt& prompt, const std::string& dir);
VisualPrompt load_prompt(const std::string& dir);

// target class j is scored against source class map[j]; must be injective.
std::vector<int> identity_label_map(int target_classes, int source_classes);

// A frozen source model adapted to the target task: restricted class view
// for accuracy, source-space view for meta features.
struct PromptedModel {
    std::shared_ptr<Endpoint> base;
    VisualPrompt prompt;
    std::vector<int> label_map;

    void validate() const;
};

// Source-space confidence vectors (length K_S) of the prompted inputs.
std::vector<std::vector<float>> prompted_source_confidences(PromptedModel& pm,
                                                            const std::vector<const Image*>& batch);

// Restricted to label_map indices and renormalized (length K_T).
std::vector<std::vector<float>> prompted_predict(PromptedModel& pm,
                                                 const std::vector<const Image*>& batch);

double prompted_accuracy(PromptedModel& pm, const LabeledImageSet& target_test);

struct PromptOptConfig {
    int epochs = 20;
    int batch_size = 32;
    float lr = 0.01f;
    float momentum = 0.9f;
};

struct PromptTrainResult {
    VisualPrompt prompt;
    std::vector<double> epoch_losses;
};

// Gradient-based prompt training against a model the defender owns. The
// base model is frozen: its parameter hash is identical before and after.
PromptTrainResult train_prompt_whitebox(const ClassifierHandle& model,
                                        const LabeledImageSet& target_train,
                                        const PromptOptConfig& cfg, uint64_t seed,
                                        int inner_size);

}  // namespace bprom
