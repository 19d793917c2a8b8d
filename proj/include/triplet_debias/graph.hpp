#pragma once

#include "triplet_debias/error.hpp"
#include "triplet_debias/geometry.hpp"
#include "triplet_debias/vocabulary.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace triplet_debias {

inline constexpr double kDistributionTolerance = 1e-6;

struct MeasuredEntity {
    BoundingBox box;
    std::vector<double> class_probs;
};

struct MeasuredPair {
    std::size_t subject_index = 0;
    std::size_t object_index = 0;
    std::vector<double> rel_probs;
};

// Per-image uncertain evidence from the upstream measurement model.
// PredCls dumps use one-hot class_probs.
struct MeasurementGraph {
    std::string image_id;
    std::vector<MeasuredEntity> entities;
    std::vector<MeasuredPair> pairs;
};

struct LabeledEntity {
    BoundingBox box;
    EntityLabel label = 0;
};

struct Relation {
    std::size_t subject_index = 0;
    std::size_t object_index = 0;
    RelationLabel rel = 0;
};

struct GroundTruthGraph {
    std::string image_id;
    std::vector<LabeledEntity> entities;
    std::vector<Relation> relations;
};

struct ScoredTriplet {
    std::size_t subject_index = 0;
    std::size_t object_index = 0;
    EntityLabel subject_label = 0;
    EntityLabel object_label = 0;
    RelationLabel rel_label = 0;
    double score = 0.0;

    friend bool operator==(const ScoredTriplet&, const ScoredTriplet&) = default;
};

// Inferred scene graph. Entity boxes are carried through from the
// measurement graph so that predictions can be matched against ground truth.
struct DebiasedGraph {
    std::string image_id;
    std::vector<EntityLabel> entity_labels;
    std::vector<BoundingBox> entity_boxes;
    std::vector<ScoredTriplet> triplets;
};

/// Checks non-negativity and |sum - 1| <= 1e-6, then rescales to sum 1.
inline void normalize_distribution(std::vector<double>& probs) {
    if (probs.empty()) {
        throw ValidationError("empty probability vector");
    }
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw ValidationError("unnormalized distribution (negative or non-finite entry)");
        }
        sum += p;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) {
        throw ValidationError("unnormalized distribution (sums to " + std::to_string(sum) + ")");
    }
    // Already normalized up to rounding: keep the values bit-exact.
    if (std::abs(sum - 1.0) <= 1e-12) return;
    for (double& p : probs) p /= sum;
}

inline std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

// Normalizes every vector in place and checks structural invariants.
inline void validate(MeasurementGraph& g) {
    const std::size_t n = g.entities.size();
    std::size_t n_e = 0;
    for (auto& e : g.entities) {
        normalize_distribution(e.class_probs);
        if (n_e == 0) n_e = e.class_probs.size();
        if (e.class_probs.size() != n_e) {
            throw ValidationError("class_probs length differs between entities");
        }
    }
    std::size_t n_r = 0;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (auto& p : g.pairs) {
        if (p.subject_index >= n || p.object_index >= n) {
            throw ValidationError("pair references a missing entity");
        }
        if (p.subject_index == p.object_index) {
            throw ValidationError("pair subject_index equals object_index");
        }
        if (!seen.emplace(p.subject_index, p.object_index).second) {
            throw ValidationError("duplicate ordered pair (" + std::to_string(p.subject_index) + ", " +
                                  std::to_string(p.object_index) + ")");
        }
        normalize_distribution(p.rel_probs);
        if (n_r == 0) n_r = p.rel_probs.size();
        if (p.rel_probs.size() != n_r) {
            throw ValidationError("rel_probs length differs between pairs");
        }
    }
}

inline void validate(const GroundTruthGraph& g, std::size_t num_entities, std::size_t num_relations) {
    for (const auto& e : g.entities) {
        if (num_entities != 0 && e.label >= num_entities) {
            throw ValidationError("ground-truth entity label out of range");
        }
    }
    for (const auto& r : g.relations) {
        if (r.subject_index >= g.entities.size() || r.object_index >= g.entities.size()) {
            throw ValidationError("relation references a missing entity");
        }
        if (num_relations != 0 && r.rel >= num_relations) {
            throw ValidationError("relation label out of range");
        }
    }
}

inline void validate(const DebiasedGraph& g) {
    if (g.entity_boxes.size() != g.entity_labels.size()) {
        throw ValidationError("entity_boxes and entity_labels differ in length");
    }
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& t : g.triplets) {
        if (t.subject_index >= g.entity_labels.size() || t.object_index >= g.entity_labels.size()) {
            throw ValidationError("triplet references a missing entity");
        }
        if (t.subject_label != g.entity_labels[t.subject_index] ||
            t.object_label != g.entity_labels[t.object_index]) {
            throw ValidationError("triplet label disagrees with its entity label");
        }
        if (!(t.score >= 0.0)) {
            throw ValidationError("negative triplet score");
        }
        if (!seen.emplace(t.subject_index, t.object_index).second) {
            throw ValidationError("more than one triplet for an ordered pair");
        }
    }
}

} // namespace triplet_debias
