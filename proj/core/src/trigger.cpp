#include "bprom/trigger.hpp"

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

void TriggerSpec::validate(const Geometry& data_geometry, int num_classes) const {
    if (mask.geometry.height != data_geometry.height ||
        mask.geometry.width != data_geometry.width || mask.geometry.channels != 1) {
        throw Error(ErrorCategory::Geometry,
                    "trigger mask geometry " + to_string(mask.geometry) +
                        " does not match data " + to_string(data_geometry));
    }
    if (pattern.geometry != data_geometry) {
        throw Error(ErrorCategory::Geometry,
                    "trigger pattern geometry " + to_string(pattern.geometry) +
                        " does not match data " + to_string(data_geometry));
    }
    if (!(alpha >= 0.0f && alpha <= 1.0f)) {
        throw Error(ErrorCategory::Config, "trigger alpha must lie in [0,1]");
    }
    if (target_class < 0 || target_class >= num_classes) {
        throw Error(ErrorCategory::Config, "trigger target class out of range");
    }
    auto in_unit = [](const std::vector<float>& v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return x >= 0.0f && x <= 1.0f; });
    };
    if (!in_unit(mask.pixels) || !in_unit(pattern.pixels)) {
        throw Error(ErrorCategory::Config, "trigger mask/pattern values must lie in [0,1]");
    }
}

Image apply_trigger(const Image& x, const TriggerSpec& spec) {
    const Geometry& g = x.geometry;
    if (spec.mask.geometry.height != g.height || spec.mask.geometry.width != g.width ||
        spec.pattern.geometry != g) {
        throw Error(ErrorCategory::Geometry,
                    "apply_trigger: image geometry " + to_string(g) + " does not match trigger");
    }
    Image out = x;
    const float alpha = spec.alpha;
    for (int y = 0; y < g.height; ++y) {
        for (int xx = 0; xx < g.width; ++xx) {
            const float m = spec.mask.at(y, xx, 0);
            if (m == 0.0f) continue;
            for (int c = 0; c < g.channels; ++c) {
                const float xv = x.at(y, xx, c);
                const float tv = spec.pattern.at(y, xx, c);
                out.at(y, xx, c) = (1.0f - m) * xv + m * ((1.0f - alpha) * tv + alpha * xv);
            }
        }
    }
    return out;
}

std::pair<LabeledImageSet, std::vector<size_t>> build_poisoned_dataset(
    const LabeledImageSet& clean, const TriggerSpec& spec, const PoisonPlan& plan) {
    if (clean.empty()) throw Error(ErrorCategory::Data, "poison: empty input set");
    if (!(plan.rate > 0.0 && plan.rate < 1.0)) {
        throw Error(ErrorCategory::Config, "poison rate must lie in (0,1)");
    }
    spec.validate(clean.geometry(), clean.num_classes);

    const size_t k =
        static_cast<size_t>(std::floor(plan.rate * static_cast<double>(clean.size())));
    if (k == 0) {
        throw Error(ErrorCategory::Data, "poison: rate " + std::to_string(plan.rate) +
                                             " selects zero items (degenerate plan)");
    }

    std::vector<size_t> eligible;
    eligible.reserve(clean.size());
    for (size_t i = 0; i < clean.size(); ++i) {
        if (plan.exclude_target_class && clean.labels[i] == spec.target_class) continue;
        eligible.push_back(i);
    }
    if (eligible.size() < k) {
        throw Error(ErrorCategory::Data,
                    "poison: only " + std::to_string(eligible.size()) +
                        " eligible samples for " + std::to_string(k) + " slots");
    }

    Rng rng(plan.seed);
    rng.shuffle(eligible);
    std::vector<size_t> chosen(eligible.begin(), eligible.begin() + k);
    std::sort(chosen.begin(), chosen.end());

    LabeledImageSet poisoned = clean;
    poisoned.name = clean.name + "/poisoned";
    for (size_t i : chosen) {
        poisoned.images[i] = apply_trigger(clean.images[i], spec);
        poisoned.labels[i] = spec.target_class;
    }
    return {std::move(poisoned), std::move(chosen)};
}

TriggerSpec make_badnets_patch(const Geometry& geometry, int target_class, int patch_size,
                               Corner corner, uint64_t pattern_seed) {
    if (patch_size <= 0 || patch_size > geometry.height || patch_size > geometry.width) {
        throw Error(ErrorCategory::Geometry,
                    "patch size " + std::to_string(patch_size) + " does not fit " +
                        to_string(geometry));
    }
    TriggerSpec spec;
    spec.alpha = 0.0f;
    spec.target_class = target_class;
    spec.name = "badnets-patch";
    spec.mask = Image(geometry.height, geometry.width, 1, 0.0f);
    spec.pattern = Image(geometry.height, geometry.width, geometry.channels, 0.0f);

    const int y0 = (corner == Corner::TopLeft || corner == Corner::TopRight)
                       ? 0
                       : geometry.height - patch_size;
    const int x0 = (corner == Corner::TopLeft || corner == Corner::BottomLeft)
                       ? 0
                       : geometry.width - patch_size;
    Rng rng(pattern_seed);
    for (int y = y0; y < y0 + patch_size; ++y) {
        for (int x = x0; x < x0 + patch_size; ++x) {
            spec.mask.at(y, x, 0) = 1.0f;
            // High-contrast checker with seeded per-cell flips.
            const bool bright = ((y + x) & 1) == 0 ? rng.uniform() < 0.85 : rng.uniform() < 0.15;
            for (int c = 0; c < geometry.channels; ++c) {
                spec.pattern.at(y, x, c) = bright ? 1.0f : 0.0f;
            }
        }
    }
    return spec;
}

TriggerSpec make_blend(const Geometry& geometry, int target_class, const Image& blend_image,
                       float alpha) {
    if (blend_image.geometry != geometry) {
        throw Error(ErrorCategory::Geometry, "blend image geometry " +
                                                 to_string(blend_image.geometry) +
                                                 " does not match " + to_string(geometry));
    }
    TriggerSpec spec;
    spec.alpha = alpha;
    spec.target_class = target_class;
    spec.name = "blend";
    spec.mask = Image(geometry.height, geometry.width, 1, 1.0f);
    spec.pattern = blend_image;
    return spec;
}

TriggerSpec make_blend_noise(const Geometry& geometry, int target_class, float alpha,
                             uint64_t pattern_seed) {
    Image noise(geometry.height, geometry.width, geometry.channels);
    Rng rng(pattern_seed);
    for (float& v : noise.pixels) v = static_cast<float>(rng.uniform());
    return make_blend(geometry, target_class, noise, alpha);
}

TriggerSpec make_preset(const std::string& kind, const Geometry& geometry, int target_class,
                        int patch_size, float alpha, uint64_t seed) {
    if (kind == "badnets-patch") {
        const auto corner = static_cast<Corner>(seed & 3);
        return make_badnets_patch(geometry, target_class, patch_size, corner, seed);
    }
    if (kind == "blend") {
        return make_blend_noise(geometry, target_class, alpha, seed);
    }
    throw Error(ErrorCategory::Config, "unknown trigger preset: " + kind);
}

void save_trigger(const TriggerSpec& spec, const std::string& dir) {
    fs::create_directories(dir);
    write_pfm((fs::path(dir) / "mask.pfm").string(), spec.mask);
    write_pfm((fs::path(dir) / "pattern.pfm").string(), spec.pattern);
    json j{{"name", spec.name},
           {"alpha", spec.alpha},
           {"target_class", spec.target_class},
           {"mask", "mask.pfm"},
           {"pattern", "pattern.pfm"}};
    std::ofstream f(fs::path(dir) / "trigger.json");
    f << j.dump(2) << "\n";
    if (!f) throw Error(ErrorCategory::Data, "failed to write trigger sidecar in " + dir);
}

TriggerSpec load_trigger(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "trigger.json");
    if (!f) throw Error(ErrorCategory::Data, "missing trigger.json in " + dir);
    json j = json::parse(f);
    TriggerSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.alpha = j.at("alpha").get<float>();
    spec.target_class = j.at("target_class").get<int>();
    spec.mask = read_pfm((fs::path(dir) / j.at("mask").get<std::string>()).string());
    spec.pattern = read_pfm((fs::path(dir) / j.at("pattern").get<std::string>()).string());
    return spec;
}

}  // namespace bprom
