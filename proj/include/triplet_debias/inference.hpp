#pragma once

#include "triplet_debias/error.hpp"
#include "triplet_debias/graph.hpp"
#include "triplet_debias/prior.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace triplet_debias {

// Measurement probabilities of one triplet, attached to the network as
// virtual evidence on S, O and R.
struct TripletEvidence {
    std::span<const double> subject;
    std::span<const double> object;
    std::span<const double> relationship;
};

/**
 * Normalized posterior over the full (s, r, o) grid. Entries are stored
 * row-major as [s][r][o].
 */
struct PosteriorTable {
    std::size_t num_entities = 0;
    std::size_t num_relations = 0;
    std::vector<double> values;
    double normalizer = 0.0; // sum of the unnormalized entries

    double at(EntityLabel s, RelationLabel r, EntityLabel o) const {
        return values[(s * num_relations + r) * num_entities + o];
    }
};

enum class ConflictStrategy { two_step, mode, none };
enum class TaskMode { predcls, sgcls, sgdet };

struct InferenceConfig {
    // Pairs whose relationship entropy (nats) exceeds this stay at the
    // measurement argmax. Unset means ln N_r, i.e. refine everything.
    // A threshold of 0 refines nothing.
    std::optional<double> entropy_threshold;
    ConflictStrategy conflict = ConflictStrategy::two_step;
    TaskMode task = TaskMode::sgcls;
};

inline ConflictStrategy parse_conflict_strategy(std::string_view name) {
    if (name == "two_step") return ConflictStrategy::two_step;
    if (name == "mode") return ConflictStrategy::mode;
    if (name == "none") return ConflictStrategy::none;
    throw ValidationError("unknown conflict strategy " + std::string(name));
}

inline TaskMode parse_task_mode(std::string_view name) {
    if (name == "predcls") return TaskMode::predcls;
    if (name == "sgcls") return TaskMode::sgcls;
    if (name == "sgdet") return TaskMode::sgdet;
    throw ValidationError("unknown task mode " + std::string(name));
}

struct TripletLabels {
    EntityLabel s = 0;
    RelationLabel r = 0;
    EntityLabel o = 0;
    double score = 0.0; // unnormalized MAP objective

    friend bool operator==(const TripletLabels&, const TripletLabels&) = default;
};

namespace detail {

inline void check_evidence(const TripletEvidence& ev, const PriorModel& prior) {
    if (ev.subject.size() != prior.num_entities() || ev.object.size() != prior.num_entities()) {
        throw ValidationError("entity evidence length " + std::to_string(ev.subject.size()) +
                              " does not match the prior vocabulary (" + std::to_string(prior.num_entities()) + ")");
    }
    if (ev.relationship.size() != prior.num_relations()) {
        throw ValidationError("relationship evidence length " + std::to_string(ev.relationship.size()) +
                              " does not match the prior vocabulary (" + std::to_string(prior.num_relations()) + ")");
    }
}

// P_m(r) / P(r), with 0 where the marginal vanishes.
inline std::vector<double> evidence_ratio(std::span<const double> rel_probs, std::span<const double> p_rel) {
    std::vector<double> ratio(rel_probs.size(), 0.0);
    for (std::size_t r = 0; r < ratio.size(); ++r) {
        if (p_rel[r] > 0.0) ratio[r] = rel_probs[r] / p_rel[r];
    }
    return ratio;
}

} // namespace detail

/// The relationship factor of the MAP objective: (P_m(r)/P(r)) * P(r|s,o).
inline double relationship_factor(double ratio, double conditional) { return ratio * conditional; }

/// Unnormalized posterior cell: P_m(s) P_m(o) * relationship_factor.
inline double objective(double subject_prob, double object_prob, double rel_factor) {
    return (subject_prob * object_prob) * rel_factor;
}

/// Dense posterior of the within-triplet network given virtual evidence.
inline PosteriorTable posterior_joint(const TripletEvidence& ev, const PriorModel& prior) {
    detail::check_evidence(ev, prior);
    const std::size_t ne = prior.num_entities();
    const std::size_t nr = prior.num_relations();
    const auto ratio = detail::evidence_ratio(ev.relationship, prior.p_rel());

    PosteriorTable table{ne, nr, std::vector<double>(ne * nr * ne, 0.0), 0.0};
    double total = 0.0;
    for (std::size_t s = 0; s < ne; ++s) {
        for (std::size_t o = 0; o < ne; ++o) {
            const auto cond = prior.conditional(s, o);
            for (std::size_t r = 0; r < nr; ++r) {
                const double v = objective(ev.subject[s], ev.object[o], relationship_factor(ratio[r], cond[r]));
                table.values[(s * nr + r) * ne + o] = v;
                total += v;
            }
        }
    }
    if (!(total > 0.0)) throw ValidationError("evidence incompatible with prior support");
    for (auto& v : table.values) v /= total;
    table.normalizer = total;
    return table;
}

/**
 * MAP labels of one triplet. Equivalent to the argmax of posterior_joint
 * with ties going to the lexicographically smallest (s, r, o), but skips
 * zero-evidence entities and bounds out pairs that cannot win.
 */
inline TripletLabels wti_map(const TripletEvidence& ev, const PriorModel& prior) {
    detail::check_evidence(ev, prior);
    const std::size_t ne = prior.num_entities();
    const std::size_t nr = prior.num_relations();
    const auto p_rel = prior.p_rel();
    const auto ratio = detail::evidence_ratio(ev.relationship, p_rel);

    // Unseen pairs share the marginal row, so their best relationship is fixed.
    double fallback_best = 0.0;
    RelationLabel fallback_r = 0;
    for (std::size_t r = 0; r < nr; ++r) {
        const double f = relationship_factor(ratio[r], p_rel[r]);
        if (f > fallback_best) {
            fallback_best = f;
            fallback_r = r;
        }
    }
    const double ratio_max = *std::max_element(ratio.begin(), ratio.end());
    const double object_max = *std::max_element(ev.object.begin(), ev.object.end());

    TripletLabels best{0, 0, 0, -1.0};
    auto consider = [&best](double v, EntityLabel s, RelationLabel r, EntityLabel o) {
        if (v > best.score ||
            (v == best.score && std::tie(s, r, o) < std::tie(best.s, best.r, best.o))) {
            best = {s, r, o, v};
        }
    };

    for (std::size_t s = 0; s < ne; ++s) {
        const double ps = ev.subject[s];
        if (ps <= 0.0) continue;
        if (objective(ps, object_max, ratio_max) < best.score) continue;
        for (std::size_t o = 0; o < ne; ++o) {
            const double po = ev.object[o];
            if (po <= 0.0) continue;
            if (objective(ps, po, ratio_max) < best.score) continue;
            if (!prior.has_row(s, o)) {
                consider(objective(ps, po, fallback_best), s, fallback_r, o);
                continue;
            }
            const auto cond = prior.conditional(s, o);
            for (std::size_t r = 0; r < nr; ++r) {
                consider(objective(ps, po, relationship_factor(ratio[r], cond[r])), s, r, o);
            }
        }
    }
    if (!(best.score > 0.0)) throw ValidationError("evidence incompatible with prior support");
    return best;
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double relationship_entropy(std::span<const double> rel_probs) {
    double h = 0.0;
    for (double p : rel_probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

inline double default_entropy_threshold(std::size_t num_relations) {
    return std::log(static_cast<double>(num_relations));
}

/// Whether a pair with this relationship entropy is refined by the prior.
inline bool passes_entropy_gate(double entropy, double threshold) {
    return threshold > 0.0 && entropy <= threshold + 1e-12;
}

/**
 * Resolves the label of one entity from its measurement and the frozen
 * per-triplet MAP labels of every refined triplet it takes part in:
 *
 *   f(E) = P_m(E) * ( sum_{as subject} P(r_t | E, o_t) + sum_{as object} P(r_t | s_t, E) )
 *
 * `triplet_labels` is aligned with graph.pairs; nullopt marks a pair left
 * unrefined by the entropy gate. Entities in no refined triplet, or whose f
 * vanishes everywhere, keep their measurement argmax.
 */
inline EntityLabel object_update(std::size_t entity_index, const MeasurementGraph& graph,
                                 std::span<const std::optional<TripletLabels>> triplet_labels,
                                 const PriorModel& prior) {
    const auto& probs = graph.entities.at(entity_index).class_probs;
    const std::size_t ne = prior.num_entities();
    if (probs.size() != ne) throw ValidationError("class_probs length does not match the prior vocabulary");
    if (triplet_labels.size() != graph.pairs.size()) {
        throw ValidationError("triplet labels do not cover every pair");
    }

    std::vector<double> support(ne, 0.0);
    bool connected = false;
    for (std::size_t p = 0; p < graph.pairs.size(); ++p) {
        const auto& labels = triplet_labels[p];
        if (!labels || graph.pairs[p].subject_index != entity_index) continue;
        connected = true;
        for (std::size_t e = 0; e < ne; ++e) support[e] += prior.conditional(e, labels->o)[labels->r];
    }
    for (std::size_t p = 0; p < graph.pairs.size(); ++p) {
        const auto& labels = triplet_labels[p];
        if (!labels || graph.pairs[p].object_index != entity_index) continue;
        connected = true;
        for (std::size_t e = 0; e < ne; ++e) support[e] += prior.conditional(labels->s, e)[labels->r];
    }
    if (!connected) return argmax(probs);

    std::size_t best = 0;
    double best_f = -1.0;
    for (std::size_t e = 0; e < ne; ++e) {
        const double f = probs[e] * support[e];
        if (f > best_f) {
            best_f = f;
            best = e;
        }
    }
    return best_f > 0.0 ? best : argmax(probs);
}

/// argmax_r (P_m(r)/P(r)) P(r|s,o); falls back to the measurement argmax
/// when every candidate scores zero.
inline RelationLabel relationship_update(std::span<const double> rel_probs, EntityLabel s, EntityLabel o,
                                         const PriorModel& prior) {
    if (rel_probs.size() != prior.num_relations()) {
        throw ValidationError("rel_probs length does not match the prior vocabulary");
    }
    const auto ratio = detail::evidence_ratio(rel_probs, prior.p_rel());
    const auto cond = prior.conditional(s, o);
    RelationLabel best = 0;
    double best_v = -1.0;
    for (std::size_t r = 0; r < ratio.size(); ++r) {
        const double v = relationship_factor(ratio[r], cond[r]);
        if (v > best_v) {
            best_v = v;
            best = r;
        }
    }
    return best_v > 0.0 ? best : argmax(rel_probs);
}

namespace detail {

inline void sort_triplets(std::vector<ScoredTriplet>& triplets) {
    std::stable_sort(triplets.begin(), triplets.end(), [](const ScoredTriplet& a, const ScoredTriplet& b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.subject_index, a.object_index) < std::tie(b.subject_index, b.object_index);
    });
}

inline double measurement_score(const MeasurementGraph& g, const MeasuredPair& p, EntityLabel s, EntityLabel o,
                                RelationLabel r) {
    return objective(g.entities[p.subject_index].class_probs[s], g.entities[p.object_index].class_probs[o],
                     p.rel_probs[r]);
}

inline DebiasedGraph skeleton(const MeasurementGraph& g) {
    DebiasedGraph out;
    out.image_id = g.image_id;
    out.entity_labels.reserve(g.entities.size());
    out.entity_boxes.reserve(g.entities.size());
    for (const auto& e : g.entities) {
        out.entity_labels.push_back(argmax(e.class_probs));
        out.entity_boxes.push_back(e.box);
    }
    return out;
}

} // namespace detail

/// Measurement argmax graph: the upstream model's own prediction, scored by
/// the product of the three measurement maxima.
inline DebiasedGraph baseline_graph(const MeasurementGraph& g) {
    DebiasedGraph out = detail::skeleton(g);
    out.triplets.reserve(g.pairs.size());
    for (const auto& p : g.pairs) {
        const EntityLabel s = out.entity_labels[p.subject_index];
        const EntityLabel o = out.entity_labels[p.object_index];
        const RelationLabel r = argmax(p.rel_probs);
        out.triplets.push_back({p.subject_index, p.object_index, s, o, r, detail::measurement_score(g, p, s, o, r)});
    }
    detail::sort_triplets(out.triplets);
    return out;
}

/**
 * Debiases one image:
 *  1. per-pair MAP inference for pairs that pass the entropy gate;
 *  2. entity conflict resolution (two-step object/relationship updating,
 *     mode selection, or none);
 *  3. scoring by the unnormalized MAP objective at the final labels.
 * Gated pairs keep their measurement relationship and are scored by the
 * measurement probabilities at the final entity labels.
 */
inline DebiasedGraph debias_graph(const MeasurementGraph& g, const PriorModel& prior,
                                  const InferenceConfig& config = {}) {
    const std::size_t ne = prior.num_entities();
    const std::size_t nr = prior.num_relations();
    for (const auto& e : g.entities) {
        if (e.class_probs.size() != ne) {
            throw ValidationError("image " + g.image_id + ": class_probs length " +
                                  std::to_string(e.class_probs.size()) + " does not match the prior vocabulary (" +
                                  std::to_string(ne) + ")");
        }
    }
    for (const auto& p : g.pairs) {
        if (p.rel_probs.size() != nr) {
            throw ValidationError("image " + g.image_id + ": rel_probs length " + std::to_string(p.rel_probs.size()) +
                                  " does not match the prior vocabulary (" + std::to_string(nr) + ")");
        }
    }
    const double threshold = config.entropy_threshold.value_or(default_entropy_threshold(nr));
    if (!(threshold >= 0.0)) throw ValidationError("entropy threshold must be non-negative");

    std::vector<std::optional<TripletLabels>> wti(g.pairs.size());
    for (std::size_t i = 0; i < g.pairs.size(); ++i) {
        const auto& p = g.pairs[i];
        if (!passes_entropy_gate(relationship_entropy(p.rel_probs), threshold)) continue;
        wti[i] = wti_map({g.entities[p.subject_index].class_probs, g.entities[p.object_index].class_probs,
                          p.rel_probs},
                         prior);
    }

    DebiasedGraph out = detail::skeleton(g);
    const bool entities_fixed = config.task == TaskMode::predcls || config.conflict == ConflictStrategy::none;
    if (!entities_fixed && config.conflict == ConflictStrategy::two_step) {
        std::vector<EntityLabel> updated(g.entities.size());
        for (std::size_t e = 0; e < g.entities.size(); ++e) updated[e] = object_update(e, g, wti, prior);
        out.entity_labels = std::move(updated);
    } else if (!entities_fixed && config.conflict == ConflictStrategy::mode) {
        std::vector<std::vector<std::size_t>> votes(g.entities.size());
        for (std::size_t i = 0; i < g.pairs.size(); ++i) {
            if (!wti[i]) continue;
            auto& sv = votes[g.pairs[i].subject_index];
            auto& ov = votes[g.pairs[i].object_index];
            if (sv.empty()) sv.assign(ne, 0);
            if (ov.empty()) ov.assign(ne, 0);
            ++sv[wti[i]->s];
            ++ov[wti[i]->o];
        }
        for (std::size_t e = 0; e < g.entities.size(); ++e) {
            if (votes[e].empty()) continue;
            out.entity_labels[e] = static_cast<EntityLabel>(
                std::max_element(votes[e].begin(), votes[e].end()) - votes[e].begin());
        }
    }

    out.triplets.reserve(g.pairs.size());
    const auto p_rel = prior.p_rel();
    for (std::size_t i = 0; i < g.pairs.size(); ++i) {
        const auto& p = g.pairs[i];
        const EntityLabel s = out.entity_labels[p.subject_index];
        const EntityLabel o = out.entity_labels[p.object_index];
        if (!wti[i]) {
            const RelationLabel r = argmax(p.rel_probs);
            out.triplets.push_back({p.subject_index, p.object_index, s, o, r, detail::measurement_score(g, p, s, o, r)});
            continue;
        }
        const RelationLabel r = relationship_update(p.rel_probs, s, o, prior);
        const double ratio = p_rel[r] > 0.0 ? p.rel_probs[r] / p_rel[r] : 0.0;
        const double score =
            objective(g.entities[p.subject_index].class_probs[s], g.entities[p.object_index].class_probs[o],
                      relationship_factor(ratio, prior.conditional(s, o)[r]));
        out.triplets.push_back({p.subject_index, p.object_index, s, o, r, score});
    }
    detail::sort_triplets(out.triplets);
    return out;
}

} // namespace triplet_debias
