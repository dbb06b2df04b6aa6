#pragma once

#include <vector>

#include "bprom/image.hpp"

namespace bprom {

// Query-only surface of a suspicious model: confidence vectors in, nothing
// else out. Detection code is written against this type so it cannot touch
// parameters or gradients.
class Endpoint {
public:
    virtual ~Endpoint() = default;

    // One confidence vector (length num_classes, nonnegative, sums to 1)
    // per batch image.
    virtual std::vector<std::vector<float>> predict(const std::vector<const Image*>& batch) = 0;

    virtual int num_classes() const = 0;
    virtual Geometry input_geometry() const = 0;
};

}  // namespace bprom
