#pragma once

// Line-delimited JSON records for measurement, ground-truth and debiased
// graphs. One record per line, one image per record.

#include "triplet_debias/error.hpp"
#include "triplet_debias/graph.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace triplet_debias {

using nlohmann::json;

/// Yields (line number, parsed record) for every non-blank line.
class RecordReader {
public:
    explicit RecordReader(std::istream& in) : in_(in) {}

    std::optional<json> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                return json::parse(line);
            } catch (const json::parse_error& e) {
                throw ValidationError("malformed record at line " + std::to_string(line_no_) + ": " + e.what());
            }
        }
        return std::nullopt;
    }

    std::size_t line() const { return line_no_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

inline void write_record(std::ostream& out, const json& record) {
    out << record.dump() << '\n';
}

// Re-throws parse failures with the offending line number attached.
template <typename F>
auto with_line_context(std::size_t line, F&& parse) -> decltype(parse()) {
    try {
        return parse();
    } catch (const json::exception& e) {
        throw ValidationError("malformed record at line " + std::to_string(line) + ": " + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " at line " + std::to_string(line));
    }
}

inline json box_to_json(const BoundingBox& b) {
    return {{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}};
}

inline BoundingBox box_from_json(const json& j) {
    return BoundingBox(j.at("x1").get<double>(), j.at("y1").get<double>(), j.at("x2").get<double>(),
                       j.at("y2").get<double>());
}

inline json to_json(const MeasurementGraph& g) {
    json entities = json::array();
    for (const auto& e : g.entities) {
        entities.push_back({{"box", box_to_json(e.box)}, {"class_probs", e.class_probs}});
    }
    json pairs = json::array();
    for (const auto& p : g.pairs) {
        pairs.push_back(
            {{"subject_index", p.subject_index}, {"object_index", p.object_index}, {"rel_probs", p.rel_probs}});
    }
    return {{"image_id", g.image_id}, {"entities", std::move(entities)}, {"pairs", std::move(pairs)}};
}

inline MeasurementGraph measurement_from_json(const json& j) {
    MeasurementGraph g;
    g.image_id = j.at("image_id").get<std::string>();
    for (const auto& e : j.at("entities")) {
        g.entities.push_back({box_from_json(e.at("box")), e.at("class_probs").get<std::vector<double>>()});
    }
    for (const auto& p : j.at("pairs")) {
        g.pairs.push_back({p.at("subject_index").get<std::size_t>(), p.at("object_index").get<std::size_t>(),
                           p.at("rel_probs").get<std::vector<double>>()});
    }
    validate(g);
    return g;
}

inline json to_json(const GroundTruthGraph& g) {
    json entities = json::array();
    for (const auto& e : g.entities) {
        entities.push_back({{"box", box_to_json(e.box)}, {"label", e.label}});
    }
    json relations = json::array();
    for (const auto& r : g.relations) {
        relations.push_back({{"subject_index", r.subject_index}, {"object_index", r.object_index}, {"rel", r.rel}});
    }
    return {{"image_id", g.image_id}, {"entities", std::move(entities)}, {"relations", std::move(relations)}};
}

inline GroundTruthGraph ground_truth_from_json(const json& j) {
    GroundTruthGraph g;
    g.image_id = j.at("image_id").get<std::string>();
    for (const auto& e : j.at("entities")) {
        g.entities.push_back({box_from_json(e.at("box")), e.at("label").get<EntityLabel>()});
    }
    for (const auto& r : j.at("relations")) {
        g.relations.push_back({r.at("subject_index").get<std::size_t>(), r.at("object_index").get<std::size_t>(),
                               r.at("rel").get<RelationLabel>()});
    }
    validate(g, 0, 0);
    return g;
}

inline json to_json(const DebiasedGraph& g) {
    json boxes = json::array();
    for (const auto& b : g.entity_boxes) boxes.push_back(box_to_json(b));
    json triplets = json::array();
    for (const auto& t : g.triplets) {
        triplets.push_back({{"subject_index", t.subject_index},
                            {"object_index", t.object_index},
                            {"subject_label", t.subject_label},
                            {"object_label", t.object_label},
                            {"rel_label", t.rel_label},
                            {"score", t.score}});
    }
    return {{"image_id", g.image_id},
            {"entity_labels", g.entity_labels},
            {"entity_boxes", std::move(boxes)},
            {"triplets", std::move(triplets)}};
}

inline DebiasedGraph debiased_from_json(const json& j) {
    DebiasedGraph g;
    g.image_id = j.at("image_id").get<std::string>();
    g.entity_labels = j.at("entity_labels").get<std::vector<EntityLabel>>();
    for (const auto& b : j.at("entity_boxes")) g.entity_boxes.push_back(box_from_json(b));
    for (const auto& t : j.at("triplets")) {
        g.triplets.push_back({t.at("subject_index").get<std::size_t>(), t.at("object_index").get<std::size_t>(),
                              t.at("subject_label").get<EntityLabel>(), t.at("object_label").get<EntityLabel>(),
                              t.at("rel_label").get<RelationLabel>(), t.at("score").get<double>()});
    }
    validate(g);
    return g;
}

/**
 * Streaming reader for measurement files. The first record may be a header
 * of the form {"vocabulary_hash": "..."} declaring the vocabulary the
 * measurement model was run against.
 */
class MeasurementReader {
public:
    explicit MeasurementReader(std::istream& in) : records_(in) {
        if (auto first = records_.next()) {
            if (first->is_object() && first->contains("vocabulary_hash") && !first->contains("image_id")) {
                vocabulary_hash_ = first->at("vocabulary_hash").get<std::string>();
            } else {
                pending_ = std::move(first);
                pending_line_ = records_.line();
            }
        }
    }

    const std::optional<std::string>& vocabulary_hash() const { return vocabulary_hash_; }

    std::optional<MeasurementGraph> next() {
        std::optional<json> record;
        std::size_t line = 0;
        if (pending_) {
            record = std::move(pending_);
            pending_.reset();
            line = pending_line_;
        } else {
            record = records_.next();
            line = records_.line();
        }
        if (!record) return std::nullopt;
        return with_line_context(line, [&] { return measurement_from_json(*record); });
    }

private:
    RecordReader records_;
    std::optional<json> pending_;
    std::size_t pending_line_ = 0;
    std::optional<std::string> vocabulary_hash_;
};

inline std::vector<MeasurementGraph> load_measurements(std::istream& in) {
    MeasurementReader reader(in);
    std::vector<MeasurementGraph> out;
    while (auto g = reader.next()) out.push_back(std::move(*g));
    return out;
}

inline std::vector<GroundTruthGraph> load_ground_truth(std::istream& in) {
    RecordReader reader(in);
    std::vector<GroundTruthGraph> out;
    while (auto record = reader.next()) {
        out.push_back(with_line_context(reader.line(), [&] { return ground_truth_from_json(*record); }));
    }
    return out;
}

inline std::vector<DebiasedGraph> load_debiased(std::istream& in) {
    RecordReader reader(in);
    std::vector<DebiasedGraph> out;
    while (auto record = reader.next()) {
        out.push_back(with_line_context(reader.line(), [&] { return debiased_from_json(*record); }));
    }
    return out;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    return out;
}

} // namespace triplet_debias
