#pragma once

#include "triplet_debias/error.hpp"
#include "triplet_debias/geometry.hpp"
#include "triplet_debias/graph.hpp"
#include "triplet_debias/prior.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace triplet_debias {

/// Keeps the first (highest-ranked) triplet of every ordered entity pair.
inline std::vector<ScoredTriplet> apply_graph_constraint(std::span<const ScoredTriplet> ranked) {
    std::set<std::pair<std::size_t, std::size_t>> used;
    std::vector<ScoredTriplet> out;
    out.reserve(ranked.size());
    for (const auto& t : ranked) {
        if (used.emplace(t.subject_index, t.object_index).second) out.push_back(t);
    }
    return out;
}

/**
 * Greedy one-to-one matching in rank order. A prediction matches the first
 * unmatched ground-truth relation with identical (subject, relation, object)
 * labels whose subject and object boxes both reach the IoU threshold.
 * Returns a flag per ground-truth relation.
 */
inline std::vector<bool> match_triplets(const DebiasedGraph& pred, std::span<const ScoredTriplet> top_k,
                                        const GroundTruthGraph& gt, double iou_threshold = 0.5) {
    std::vector<bool> matched(gt.relations.size(), false);
    for (const auto& t : top_k) {
        const auto& ps = pred.entity_boxes.at(t.subject_index);
        const auto& po = pred.entity_boxes.at(t.object_index);
        for (std::size_t j = 0; j < gt.relations.size(); ++j) {
            if (matched[j]) continue;
            const auto& rel = gt.relations[j];
            const auto& gs = gt.entities[rel.subject_index];
            const auto& go = gt.entities[rel.object_index];
            if (t.rel_label != rel.rel || t.subject_label != gs.label || t.object_label != go.label) continue;
            if (iou(ps, gs.box) < iou_threshold || iou(po, go.box) < iou_threshold) continue;
            matched[j] = true;
            break;
        }
    }
    return matched;
}

struct EvalConfig {
    std::vector<std::size_t> ks{50, 100};
    double iou_threshold = 0.5;
    std::size_t num_relations = 0; // 0: infer from the ground truth
};

struct RecallAtK {
    std::size_t k = 0;
    std::optional<double> recall;
    std::optional<double> mean_recall;
    std::vector<std::optional<double>> per_predicate; // nullopt: predicate absent from ground truth
    std::optional<double> zero_shot_recall;
    std::optional<double> zero_shot_mean_recall;
};

struct EvalReport {
    std::size_t image_count = 0;
    bool zero_shot = false;
    std::vector<RecallAtK> results;
};

namespace detail {

struct RecallAccumulator {
    double recall_sum = 0.0;
    std::size_t recall_images = 0;
    std::vector<double> pred_sum;
    std::vector<std::size_t> pred_images;

    explicit RecallAccumulator(std::size_t nr) : pred_sum(nr, 0.0), pred_images(nr, 0) {}

    void add(const std::vector<bool>& matched, const std::vector<std::size_t>& subset, const GroundTruthGraph& gt) {
        if (subset.empty()) return;
        std::size_t hits = 0;
        std::vector<std::size_t> rel_total(pred_sum.size(), 0);
        std::vector<std::size_t> rel_hits(pred_sum.size(), 0);
        for (std::size_t j : subset) {
            const auto r = gt.relations[j].rel;
            ++rel_total[r];
            if (matched[j]) {
                ++hits;
                ++rel_hits[r];
            }
        }
        recall_sum += static_cast<double>(hits) / static_cast<double>(subset.size());
        ++recall_images;
        for (std::size_t r = 0; r < pred_sum.size(); ++r) {
            if (rel_total[r] == 0) continue;
            pred_sum[r] += static_cast<double>(rel_hits[r]) / static_cast<double>(rel_total[r]);
            ++pred_images[r];
        }
    }

    std::optional<double> recall() const {
        if (recall_images == 0) return std::nullopt;
        return recall_sum / static_cast<double>(recall_images);
    }

    std::vector<std::optional<double>> per_predicate() const {
        std::vector<std::optional<double>> out(pred_sum.size());
        for (std::size_t r = 0; r < out.size(); ++r) {
            if (pred_images[r] > 0) out[r] = pred_sum[r] / static_cast<double>(pred_images[r]);
        }
        return out;
    }
};

} // namespace detail

/// Arithmetic mean of the defined entries; nullopt when none is defined.
inline std::optional<double> mean_of_defined(std::span<const std::optional<double>> values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

/**
 * Graph-constrained R@K and mR@K, averaged per image. Per-predicate recall
 * averages over the images containing that predicate; mR@K averages the
 * predicates present in the ground truth. With `seen` supplied, the
 * zero-shot variants restrict ground truth to unseen (s, r, o) combinations.
 */
inline EvalReport evaluate(std::span<const DebiasedGraph> predictions, std::span<const GroundTruthGraph> gts,
                           const EvalConfig& config = {}, const std::set<ValidKey>* seen = nullptr) {
    if (config.ks.empty()) throw ValidationError("K list must not be empty");
    for (std::size_t i = 0; i < config.ks.size(); ++i) {
        if (config.ks[i] == 0) throw ValidationError("K must be at least 1");
        if (i > 0 && config.ks[i] <= config.ks[i - 1]) throw ValidationError("K list must be ascending");
    }

    std::map<std::string, const DebiasedGraph*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.image_id, &p).second) throw ValidationError("duplicate prediction image_id " + p.image_id);
    }
    std::vector<std::string> missing;
    std::set<std::string> gt_ids;
    std::size_t nr = config.num_relations;
    for (const auto& g : gts) {
        if (!gt_ids.insert(g.image_id).second) throw ValidationError("duplicate ground-truth image_id " + g.image_id);
        if (!by_id.count(g.image_id)) missing.push_back(g.image_id);
        for (const auto& r : g.relations) {
            if (config.num_relations == 0) {
                nr = std::max(nr, r.rel + 1);
            } else if (r.rel >= config.num_relations) {
                throw ValidationError("ground-truth relation label out of range in image " + g.image_id);
            }
        }
    }
    for (const auto& [id, _] : by_id) {
        if (!gt_ids.count(id)) missing.push_back(id);
    }
    if (!missing.empty()) {
        std::string msg = "image_id mismatch between predictions and ground truth:";
        for (const auto& id : missing) msg += " " + id;
        throw ValidationError(msg);
    }

    EvalReport report;
    report.image_count = gts.size();
    report.zero_shot = seen != nullptr;
    for (std::size_t k : config.ks) {
        detail::RecallAccumulator all(nr);
        detail::RecallAccumulator zero_shot(nr);
        for (const auto& gt : gts) {
            const auto& pred = *by_id.at(gt.image_id);
            const auto constrained = apply_graph_constraint(pred.triplets);
            const auto top = std::span<const ScoredTriplet>(constrained).first(std::min(k, constrained.size()));
            const auto matched = match_triplets(pred, top, gt, config.iou_threshold);

            std::vector<std::size_t> every(gt.relations.size());
            std::vector<std::size_t> unseen;
            for (std::size_t j = 0; j < gt.relations.size(); ++j) {
                every[j] = j;
                const auto& rel = gt.relations[j];
                if (seen && !seen->count({gt.entities[rel.subject_index].label, rel.rel,
                                          gt.entities[rel.object_index].label})) {
                    unseen.push_back(j);
                }
            }
            all.add(matched, every, gt);
            zero_shot.add(matched, unseen, gt);
        }
        RecallAtK row;
        row.k = k;
        row.recall = all.recall();
        row.per_predicate = all.per_predicate();
        row.mean_recall = mean_of_defined(row.per_predicate);
        if (seen) {
            row.zero_shot_recall = zero_shot.recall();
            row.zero_shot_mean_recall = mean_of_defined(zero_shot.per_predicate());
        }
        report.results.push_back(std::move(row));
    }
    return report;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& row : report.results) {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& v : row.per_predicate) per.push_back(optional_json(v));
        nlohmann::json entry = {{"k", row.k},
                                {"recall", optional_json(row.recall)},
                                {"mean_recall", optional_json(row.mean_recall)},
                                {"per_predicate_recall", std::move(per)}};
        if (report.zero_shot) {
            entry["zero_shot_recall"] = optional_json(row.zero_shot_recall);
            entry["zero_shot_mean_recall"] = optional_json(row.zero_shot_mean_recall);
        }
        results.push_back(std::move(entry));
    }
    return {{"image_count", report.image_count}, {"results", std::move(results)}};
}

namespace detail {
inline std::string percent(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v * 100.0);
    return buf;
}
} // namespace detail

// Aligned plain-text table, recalls in percent.
inline std::string format_report(const EvalReport& report) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "images: %zu\n", report.image_count);
    os << line;
    std::snprintf(line, sizeof(line), "%6s %10s %10s", "K", "R@K", "mR@K");
    os << line;
    if (report.zero_shot) {
        std::snprintf(line, sizeof(line), " %10s %10s", "zsR@K", "zsmR@K");
        os << line;
    }
    os << '\n';
    for (const auto& row : report.results) {
        std::snprintf(line, sizeof(line), "%6zu %10s %10s", row.k, detail::percent(row.recall).c_str(),
                      detail::percent(row.mean_recall).c_str());
        os << line;
        if (report.zero_shot) {
            std::snprintf(line, sizeof(line), " %10s %10s", detail::percent(row.zero_shot_recall).c_str(),
                          detail::percent(row.zero_shot_mean_recall).c_str());
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

/// One row per predicate, one recall column per K; empty cells for
/// predicates without ground truth.
inline void write_per_predicate_csv(std::ostream& out, const EvalReport& report,
                                    std::span<const std::string> predicate_names = {}) {
    out << "predicate";
    for (const auto& row : report.results) out << ",recall@" << row.k;
    out << '\n';
    const std::size_t nr = report.results.empty() ? 0 : report.results.front().per_predicate.size();
    for (std::size_t r = 0; r < nr; ++r) {
        if (r < predicate_names.size()) {
            out << predicate_names[r];
        } else {
            out << r;
        }
        for (const auto& row : report.results) {
            out << ',';
            if (row.per_predicate[r]) out << nlohmann::json(*row.per_predicate[r]).dump();
        }
        out << '\n';
    }
}

} // namespace triplet_debias
