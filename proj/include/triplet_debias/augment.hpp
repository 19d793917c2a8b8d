#pragma once

#include "triplet_debias/error.hpp"
#include "triplet_debias/io.hpp"
#include "triplet_debias/prior.hpp"
#include "triplet_debias/vocabulary.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace triplet_debias {

inline constexpr double kUnitNormTolerance = 1e-6;

// Sentence-embedding vectors keyed by rendered triplet text.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::size_t dimension) : dimension_(dimension) {
        if (dimension_ == 0) throw ValidationError("embedding dimension must be positive");
    }

    std::size_t dimension() const { return dimension_; }
    std::size_t size() const { return vectors_.size(); }

    void add(std::string text, std::vector<double> vector) {
        if (vector.size() != dimension_) {
            throw ValidationError("embedding for '" + text + "' has dimension " + std::to_string(vector.size()) +
                                  ", expected " + std::to_string(dimension_));
        }
        double sq = 0.0;
        for (double v : vector) sq += v * v;
        if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
            throw ValidationError("embedding for '" + text + "' is not unit-norm");
        }
        if (!vectors_.emplace(text, std::move(vector)).second) {
            throw ValidationError("duplicate embedding text '" + text + "'");
        }
    }

    std::span<const double> at(const std::string& text) const {
        auto it = vectors_.find(text);
        if (it == vectors_.end()) throw ValidationError("missing embedding for triplet '" + text + "'");
        return it->second;
    }

    bool contains(const std::string& text) const { return vectors_.count(text) > 0; }

private:
    std::size_t dimension_;
    std::unordered_map<std::string, std::vector<double>> vectors_;
};

// Header record {"dimension": D}, then one {"text", "vector"} record per line.
inline EmbeddingTable load_embeddings(std::istream& in) {
    RecordReader reader(in);
    auto header = reader.next();
    if (!header) throw ValidationError("empty embedding file");
    EmbeddingTable table = with_line_context(reader.line(), [&] {
        return EmbeddingTable(header->at("dimension").get<std::size_t>());
    });
    while (auto record = reader.next()) {
        with_line_context(reader.line(), [&] {
            table.add(record->at("text").get<std::string>(), record->at("vector").get<std::vector<double>>());
            return 0;
        });
    }
    return table;
}

/// 1 - <u, v> for unit vectors; lies in [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ValidationError("embedding dimension mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    return 1.0 - dot;
}

// Lowercase "subject relationship object", single spaces, underscores as spaces.
// The embedding exporter must produce byte-identical strings.
inline std::string render_triplet_text(const std::string& subject, const std::string& relationship,
                                       const std::string& object) {
    std::string out;
    out.reserve(subject.size() + relationship.size() + object.size() + 2);
    auto append = [&out](const std::string& part) {
        for (unsigned char c : part) {
            out.push_back(c == '_' ? ' ' : static_cast<char>(std::tolower(c)));
        }
    };
    append(subject);
    out.push_back(' ');
    append(relationship);
    out.push_back(' ');
    append(object);
    return out;
}

struct AugmentationConfig {
    double epsilon = 0.05;
    // Credit each invalid triplet only to its nearest in-ball valid triplet.
    bool nearest_only = false;
};

/// Candidates whose embedding lies strictly within eps of the valid triplet.
inline std::vector<InvalidKey> epsilon_neighborhood(const ValidKey& valid, std::span<const InvalidKey> candidates,
                                                    const Vocabulary& vocab, const EmbeddingTable& table, double eps) {
    const auto& s = vocab.object_label(valid.s);
    const auto& o = vocab.object_label(valid.o);
    auto anchor = table.at(render_triplet_text(s, vocab.predicate_label(valid.r), o));
    std::vector<InvalidKey> out;
    for (const auto& c : candidates) {
        if (c.s != valid.s || c.o != valid.o) {
            throw ValidationError("neighborhood candidate does not share the subject-object pair");
        }
        if (cosine_distance(anchor, table.at(render_triplet_text(s, c.r_text, o))) < eps) {
            out.push_back(c);
        }
    }
    return out;
}

/**
 * Adds the counts of out-of-vocabulary triplets lying in the eps-ball of a
 * valid triplet over the same (s,o) pair to that valid triplet. Invalid
 * counts are carried through unchanged. By default an invalid triplet inside
 * several balls contributes to each of them.
 */
inline TripletCounts augment_counts(const TripletCounts& counts, const Vocabulary& vocab,
                                    const EmbeddingTable& table, const AugmentationConfig& config = {}) {
    if (!(config.epsilon >= 0.0)) throw ValidationError("epsilon must be non-negative");
    using Pair = std::pair<EntityLabel, EntityLabel>;
    std::map<Pair, std::vector<InvalidKey>> invalid_by_pair;
    for (const auto& [k, c] : counts.invalid) invalid_by_pair[{k.s, k.o}].push_back(k);

    TripletCounts out = counts;
    if (!config.nearest_only) {
        for (auto& [key, count] : out.valid) {
            auto it = invalid_by_pair.find({key.s, key.o});
            if (it == invalid_by_pair.end()) continue;
            for (const auto& n : epsilon_neighborhood(key, it->second, vocab, table, config.epsilon)) {
                count += counts.invalid.at(n);
            }
        }
        return out;
    }

    std::map<Pair, std::vector<ValidKey>> valid_by_pair;
    for (const auto& [k, c] : counts.valid) valid_by_pair[{k.s, k.o}].push_back(k);
    for (const auto& [pair, candidates] : invalid_by_pair) {
        auto vit = valid_by_pair.find(pair);
        if (vit == valid_by_pair.end()) continue;
        const auto& s = vocab.object_label(pair.first);
        const auto& o = vocab.object_label(pair.second);
        for (const auto& cand : candidates) {
            auto cv = table.at(render_triplet_text(s, cand.r_text, o));
            const ValidKey* nearest = nullptr;
            double best = std::numeric_limits<double>::infinity();
            // valid keys are in ascending r order, so ties keep the lowest index
            for (const auto& vk : vit->second) {
                const double d = cosine_distance(table.at(render_triplet_text(s, vocab.predicate_label(vk.r), o)), cv);
                if (d < config.epsilon && d < best) {
                    best = d;
                    nearest = &vk;
                }
            }
            if (nearest) out.valid[*nearest] += counts.invalid.at(cand);
        }
    }
    return out;
}

} // namespace triplet_debias
