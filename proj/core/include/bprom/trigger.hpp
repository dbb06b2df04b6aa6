#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bprom/dataset.hpp"
#include "bprom/image.hpp"

namespace bprom {

// Attack tuple (m, t, alpha, y_t). The mask is single-channel and broadcast
// across channels; alpha weights the original image, so alpha = 0 replaces
// masked pixels with the pattern outright.
struct TriggerSpec {
    Image mask;     // H x W x 1, values in [0,1]
    Image pattern;  // H x W x C, values in [0,1]
    float alpha = 0.0f;
    int target_class = 0;
    std::string name;

    void validate(const Geometry& data_geometry, int num_classes) const;
};

struct PoisonPlan {
    double rate = 0.1;  // in (0,1)
    uint64_t seed = 0;
    bool exclude_target_class = false;
};

// x' = (1 - m) * x + m * ((1 - alpha) * t + alpha * x), elementwise.
Image apply_trigger(const Image& x, const TriggerSpec& spec);

// Replaces floor(rate * N) items in place with (apply_trigger(x), y_t).
// Selection is deterministic under the plan seed; returns the poisoned set
// and the ascending list of poisoned indices.
std::pair<LabeledImageSet, std::vector<size_t>> build_poisoned_dataset(
    const LabeledImageSet& clean, const TriggerSpec& spec, const PoisonPlan& plan);

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

// BadNets-style patch: mask = 1 on a corner square, alpha = 0, seeded
// checker-like pattern.
TriggerSpec make_badnets_patch(const Geometry& geometry, int target_class, int patch_size,
                               Corner corner, uint64_t pattern_seed);

// Blend-style trigger: mask = 1 everywhere, pattern blended globally at
// (1 - alpha) opacity.
TriggerSpec make_blend(const Geometry& geometry, int target_class, const Image& blend_image,
                       float alpha);
TriggerSpec make_blend_noise(const Geometry& geometry, int target_class, float alpha,
                             uint64_t pattern_seed);

// Preset factory used by configs: kind is "badnets-patch" or "blend".
TriggerSpec make_preset(const std::string& kind, const Geometry& geometry, int target_class,
                        int patch_size, float alpha, uint64_t seed);

// JSON sidecar with the mask/pattern written as float image files next to it.
void save_trigger(const TriggerSpec& spec, const std::string& dir);
TriggerSpec load_trigger(const std::string& dir);

}  // namespace bprom
