#pragma once

#include "triplet_debias/error.hpp"
#include "triplet_debias/io.hpp"
#include "triplet_debias/vocabulary.hpp"

#include <json.hpp>

#include <cmath>
#include <compare>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace triplet_debias {

struct ValidKey {
    EntityLabel s = 0;
    RelationLabel r = 0;
    EntityLabel o = 0;
    auto operator<=>(const ValidKey&) const = default;
};

// Triplet whose relationship text falls outside the predicate vocabulary.
struct InvalidKey {
    EntityLabel s = 0;
    std::string r_text;
    EntityLabel o = 0;
    auto operator<=>(const InvalidKey&) const = default;
};

struct TripletCounts {
    std::map<ValidKey, double> valid;
    std::map<InvalidKey, double> invalid;

    double valid_total() const {
        double t = 0.0;
        for (const auto& [k, c] : valid) t += c;
        return t;
    }
    double invalid_total() const {
        double t = 0.0;
        for (const auto& [k, c] : invalid) t += c;
        return t;
    }

    friend bool operator==(const TripletCounts&, const TripletCounts&) = default;
};

struct Annotation {
    std::string subject;
    std::string relationship;
    std::string object;
    double count = 1.0;
};

/// Splits annotations into in-vocabulary and out-of-vocabulary relationship
/// counts. Subject and object labels must be in the vocabulary.
inline TripletCounts accumulate_counts(std::span<const Annotation> annotations, const Vocabulary& vocab) {
    TripletCounts counts;
    for (const auto& a : annotations) {
        if (!(a.count >= 0.0) || !std::isfinite(a.count)) {
            throw ValidationError("negative or non-finite count for " + a.subject + " " + a.relationship + " " +
                                  a.object);
        }
        const EntityLabel s = vocab.object_index(a.subject);
        const EntityLabel o = vocab.object_index(a.object);
        if (auto r = vocab.find_predicate(a.relationship)) {
            counts.valid[{s, *r, o}] += a.count;
        } else {
            counts.invalid[{s, a.relationship, o}] += a.count;
        }
    }
    return counts;
}

// Counts file: one {"subject", "relationship", "object", "count"} record per line.
inline std::vector<Annotation> load_annotations(std::istream& in) {
    RecordReader reader(in);
    std::vector<Annotation> out;
    while (auto record = reader.next()) {
        out.push_back(with_line_context(reader.line(), [&] {
            Annotation a{record->at("subject").get<std::string>(), record->at("relationship").get<std::string>(),
                         record->at("object").get<std::string>(), 1.0};
            if (record->contains("count")) a.count = record->at("count").get<double>();
            return a;
        }));
    }
    return out;
}

inline json count_value(double c) {
    if (c == std::floor(c) && c >= 0.0 && c < 9007199254740992.0) {
        return static_cast<std::uint64_t>(c);
    }
    return c;
}

inline void write_counts(std::ostream& out, const TripletCounts& counts, const Vocabulary& vocab) {
    for (const auto& [k, c] : counts.valid) {
        write_record(out, {{"subject", vocab.object_label(k.s)},
                           {"relationship", vocab.predicate_label(k.r)},
                           {"object", vocab.object_label(k.o)},
                           {"count", count_value(c)}});
    }
    for (const auto& [k, c] : counts.invalid) {
        write_record(out, {{"subject", vocab.object_label(k.s)},
                           {"relationship", k.r_text},
                           {"object", vocab.object_label(k.o)},
                           {"count", count_value(c)}});
    }
}

/**
 * Parameters of the within-triplet Bayesian network S -> R <- O:
 * P(S), P(O), P(R|S,O) for pairs seen in training, and the marginal P(R).
 *
 * Conditional rows live in one flat buffer addressed through a dense
 * N_e x N_e pair index so lookups inside the MAP loops stay cheap.
 */
class PriorModel {
public:
    struct Row {
        EntityLabel s = 0;
        EntityLabel o = 0;
        std::vector<double> probs;
    };

    PriorModel(Vocabulary vocab, std::vector<double> p_subject, std::vector<double> p_object,
               std::vector<double> p_rel, const std::vector<Row>& rows, std::set<ValidKey> seen_triplets)
        : vocab_(std::move(vocab)),
          p_subject_(std::move(p_subject)),
          p_object_(std::move(p_object)),
          p_rel_(std::move(p_rel)),
          seen_(std::move(seen_triplets)) {
        const std::size_t ne = vocab_.num_entities();
        const std::size_t nr = vocab_.num_relations();
        check_distribution(p_subject_, ne, "p_subject");
        check_distribution(p_object_, ne, "p_object");
        check_distribution(p_rel_, nr, "p_rel");
        row_of_pair_.assign(ne * ne, kNoRow);
        rows_.reserve(rows.size() * nr);
        for (const auto& row : rows) {
            if (row.s >= ne || row.o >= ne) throw ValidationError("conditional row index out of range");
            check_distribution(row.probs, nr, "conditional row");
            auto& slot = row_of_pair_[row.s * ne + row.o];
            if (slot != kNoRow) throw ValidationError("duplicate conditional row");
            slot = static_cast<std::int32_t>(pairs_.size());
            pairs_.emplace_back(row.s, row.o);
            rows_.insert(rows_.end(), row.probs.begin(), row.probs.end());
        }
        for (const auto& k : seen_) {
            if (k.s >= ne || k.o >= ne || k.r >= nr) throw ValidationError("seen triplet out of range");
        }
    }

    const Vocabulary& vocabulary() const { return vocab_; }
    std::size_t num_entities() const { return vocab_.num_entities(); }
    std::size_t num_relations() const { return vocab_.num_relations(); }

    std::span<const double> p_subject() const { return p_subject_; }
    std::span<const double> p_object() const { return p_object_; }
    std::span<const double> p_rel() const { return p_rel_; }

    bool has_row(EntityLabel s, EntityLabel o) const { return row_of_pair_[s * num_entities() + o] != kNoRow; }

    /// P(R | S=s, O=o); pairs unseen in training fall back to P(R).
    std::span<const double> conditional(EntityLabel s, EntityLabel o) const {
        const auto row = row_of_pair_[s * num_entities() + o];
        if (row == kNoRow) return p_rel_;
        return std::span<const double>(rows_).subspan(static_cast<std::size_t>(row) * num_relations(),
                                                      num_relations());
    }

    std::size_t num_rows() const { return pairs_.size(); }
    std::vector<Row> rows() const {
        std::vector<Row> out;
        out.reserve(pairs_.size());
        for (const auto& [s, o] : pairs_) {
            auto c = conditional(s, o);
            out.push_back({s, o, std::vector<double>(c.begin(), c.end())});
        }
        return out;
    }

    const std::set<ValidKey>& seen_triplets() const { return seen_; }
    bool seen(EntityLabel s, RelationLabel r, EntityLabel o) const { return seen_.count({s, r, o}) > 0; }

private:
    static constexpr std::int32_t kNoRow = -1;

    static void check_distribution(const std::vector<double>& v, std::size_t n, const char* what) {
        if (v.size() != n) {
            throw ValidationError(std::string(what) + " has length " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(n));
        }
        double sum = 0.0;
        for (double p : v) {
            if (!(p >= 0.0)) throw ValidationError(std::string(what) + " has a negative entry");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ValidationError(std::string(what) + " does not sum to 1");
        }
    }

    Vocabulary vocab_;
    std::vector<double> p_subject_;
    std::vector<double> p_object_;
    std::vector<double> p_rel_;
    std::vector<std::int32_t> row_of_pair_;
    std::vector<std::pair<EntityLabel, EntityLabel>> pairs_;
    std::vector<double> rows_;
    std::set<ValidKey> seen_;
};

struct PriorConfig {
    double smoothing = 0.0; // add-k on every cell of each stored (s,o) row
};

/**
 * Maximum-likelihood estimate of the network from valid triplet counts.
 *
 * P(R|s,o) is the relative frequency of r within the (s,o) row. P(S) and
 * P(O) are relative frequencies of the subject and object slots. P(R) is
 * sum_{s,o} P(R|s,o) P(s) P(o) where unseen pairs use P(R) itself as their
 * row; that self-consistent sum reduces to the P(s)P(o)-weighted mean of
 * the stored rows.
 */
inline PriorModel estimate_prior(const TripletCounts& counts, const Vocabulary& vocab, const PriorConfig& config = {}) {
    if (!(config.smoothing >= 0.0)) throw ValidationError("smoothing must be non-negative");
    const std::size_t ne = vocab.num_entities();
    const std::size_t nr = vocab.num_relations();

    std::vector<double> p_subject(ne, 0.0);
    std::vector<double> p_object(ne, 0.0);
    std::map<std::pair<EntityLabel, EntityLabel>, std::vector<double>> grouped;
    std::set<ValidKey> seen;
    double total = 0.0;
    for (const auto& [k, c] : counts.valid) {
        if (k.s >= ne || k.o >= ne || k.r >= nr) throw ValidationError("count key outside vocabulary");
        if (!(c >= 0.0)) throw ValidationError("negative count");
        auto& row = grouped[{k.s, k.o}];
        if (row.empty()) row.assign(nr, 0.0);
        row[k.r] += c;
        p_subject[k.s] += c;
        p_object[k.o] += c;
        total += c;
        if (c > 0.0) seen.insert(k);
    }
    if (!(total > 0.0)) throw ValidationError("no training triplets");
    for (auto& p : p_subject) p /= total;
    for (auto& p : p_object) p /= total;

    std::vector<PriorModel::Row> rows;
    std::vector<double> rel_mass(nr, 0.0);
    double pair_mass = 0.0;
    for (auto& [so, row] : grouped) {
        double row_total = 0.0;
        for (auto& v : row) {
            v += config.smoothing;
            row_total += v;
        }
        if (!(row_total > 0.0)) continue;
        for (auto& v : row) v /= row_total;
        const double w = p_subject[so.first] * p_object[so.second];
        for (std::size_t r = 0; r < nr; ++r) rel_mass[r] += w * row[r];
        pair_mass += w;
        rows.push_back({so.first, so.second, std::move(row)});
    }
    // pair_mass > 0: every subject/object with positive count has a row.
    for (auto& v : rel_mass) v /= pair_mass;
    return PriorModel(vocab, std::move(p_subject), std::move(p_object), std::move(rel_mass), rows, std::move(seen));
}

inline constexpr int kPriorFormatVersion = 1;

inline json prior_to_json(const PriorModel& prior) {
    json rows = json::array();
    for (const auto& row : prior.rows()) {
        rows.push_back({{"s", row.s}, {"o", row.o}, {"row", row.probs}});
    }
    json seen = json::array();
    for (const auto& k : prior.seen_triplets()) seen.push_back({k.s, k.r, k.o});
    const auto& vocab = prior.vocabulary();
    return {{"format", "triplet-debias-prior"},
            {"format_version", kPriorFormatVersion},
            {"vocabulary_hash", vocab.hash()},
            {"objects", vocab.objects()},
            {"predicates", vocab.predicates()},
            {"p_subject", std::vector<double>(prior.p_subject().begin(), prior.p_subject().end())},
            {"p_object", std::vector<double>(prior.p_object().begin(), prior.p_object().end())},
            {"p_rel", std::vector<double>(prior.p_rel().begin(), prior.p_rel().end())},
            {"cond", std::move(rows)},
            {"seen_triplets", std::move(seen)}};
}

inline PriorModel prior_from_json(const json& doc) {
    try {
        Vocabulary vocab = vocabulary_from_json(doc);
        if (doc.at("format_version").get<int>() != kPriorFormatVersion) {
            throw ValidationError("unsupported prior format version");
        }
        if (doc.at("vocabulary_hash").get<std::string>() != vocab.hash()) {
            throw ValidationError("prior vocabulary hash does not match its label lists");
        }
        std::vector<PriorModel::Row> rows;
        for (const auto& r : doc.at("cond")) {
            rows.push_back({r.at("s").get<EntityLabel>(), r.at("o").get<EntityLabel>(),
                            r.at("row").get<std::vector<double>>()});
        }
        std::set<ValidKey> seen;
        for (const auto& t : doc.at("seen_triplets")) {
            seen.insert({t.at(0).get<EntityLabel>(), t.at(1).get<RelationLabel>(), t.at(2).get<EntityLabel>()});
        }
        return PriorModel(std::move(vocab), doc.at("p_subject").get<std::vector<double>>(),
                          doc.at("p_object").get<std::vector<double>>(), doc.at("p_rel").get<std::vector<double>>(),
                          rows, std::move(seen));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed prior model: ") + e.what());
    }
}

inline PriorModel load_prior(std::istream& in) {
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed prior model: ") + e.what());
    }
    return prior_from_json(doc);
}

} // namespace triplet_debias
