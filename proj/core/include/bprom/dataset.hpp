#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bprom/image.hpp"

namespace bprom {

// Ordered, immutable-after-construction collection of (image, label) pairs.
// All downstream formulas assume pixel values in [0,1].
struct LabeledImageSet {
    std::vector<Image> images;
    std::vector<int> labels;
    int num_classes = 0;
    std::string name;

    size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
    Geometry geometry() const { return images.empty() ? Geometry{} : images.front().geometry; }

    // Throws ErrorCategory::Data when any invariant is violated.
    void validate() const;

    uint64_t content_hash() const;
    LabeledImageSet subset(const std::vector<size_t>& indices, const std::string& new_name) const;
};

struct SplitSpec {
    double fraction = 0.1;  // in (0, 1]
    uint64_t seed = 0;
    bool stratified = true;
};

// Deterministic two-way partition. The first part gets round(fraction * N)
// items; parts are disjoint and cover the input. Stratified mode apportions
// per-class counts by largest remainder.
std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set,
                                                  const SplitSpec& spec);

// Index sets behind `split`, for manifests and tests.
std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(const LabeledImageSet& set,
                                                                  const SplitSpec& spec);

// Draws q items without replacement, deterministic under seed; the returned
// order is the fixed sampling order (feature positions depend on it).
LabeledImageSet sample_query_set(const LabeledImageSet& test, size_t q, uint64_t seed);
std::vector<size_t> sample_query_indices(size_t n, size_t q, uint64_t seed);

// Parameters of the bundled synthetic corpus: colored-shape classes rendered
// on procedural backgrounds. "source" and "target" render the same class
// semantics in visibly different styles, so prompting a source-trained model
// onto target data is learnable but not trivial.
struct SyntheticSpec {
    std::string domain = "source";  // "source" | "target"
    size_t count = 1000;
    int num_classes = 10;
    int size = 32;
    uint64_t seed = 0;
};

LabeledImageSet make_synthetic(const SyntheticSpec& spec);

// Loads a dataset by name:
//   "cifar10-train" / "cifar10-test"  — CIFAR-10 binary batches under root
//   "stl10-train" / "stl10-test"      — STL-10 binary files under root
//   "synthetic?domain=source&n=1000&classes=10&size=32&seed=1"
// Synthetic names carry their generation parameters; file-backed names read
// from `root`.
LabeledImageSet load_dataset(const std::string& name, const std::string& root);

}  // namespace bprom
