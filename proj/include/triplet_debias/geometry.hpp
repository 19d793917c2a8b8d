#pragma once

#include "triplet_debias/error.hpp"

#include <algorithm>

namespace triplet_debias {

struct BoundingBox {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 1.0;
    double y2 = 1.0;

    BoundingBox() = default;
    BoundingBox(double left, double top, double right, double bottom)
        : x1(left), y1(top), x2(right), y2(bottom) {
        if (!(x2 > x1) || !(y2 > y1)) {
            throw ValidationError("invalid bounding box: require x2 > x1 and y2 > y1");
        }
    }

    double area() const { return (x2 - x1) * (y2 - y1); }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Intersection over union; 0 for disjoint or edge-touching boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iw <= 0.0 || ih <= 0.0) {
        return 0.0;
    }
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

} // namespace triplet_debias
