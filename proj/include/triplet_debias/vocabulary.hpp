#pragma once

#include "triplet_debias/error.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace triplet_debias {

using EntityLabel = std::size_t;
using RelationLabel = std::size_t;

/**
 * Fixed index maps for entity categories (shared by the subject and object
 * roles) and relationship categories. Indices follow declaration order.
 */
class Vocabulary {
public:
    Vocabulary(std::vector<std::string> objects, std::vector<std::string> predicates)
        : objects_(std::move(objects)), predicates_(std::move(predicates)) {
        if (objects_.empty()) {
            throw ValidationError("empty object label list");
        }
        if (predicates_.empty()) {
            throw ValidationError("empty predicate label list");
        }
        index_labels(objects_, object_index_, "object");
        index_labels(predicates_, predicate_index_, "predicate");
    }

    std::size_t num_entities() const { return objects_.size(); }
    std::size_t num_relations() const { return predicates_.size(); }

    const std::vector<std::string>& objects() const { return objects_; }
    const std::vector<std::string>& predicates() const { return predicates_; }

    const std::string& object_label(EntityLabel i) const { return objects_.at(i); }
    const std::string& predicate_label(RelationLabel i) const { return predicates_.at(i); }

    std::optional<EntityLabel> find_object(const std::string& label) const {
        auto it = object_index_.find(label);
        if (it == object_index_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<RelationLabel> find_predicate(const std::string& label) const {
        auto it = predicate_index_.find(label);
        if (it == predicate_index_.end()) return std::nullopt;
        return it->second;
    }

    EntityLabel object_index(const std::string& label) const {
        if (auto idx = find_object(label)) return *idx;
        throw ValidationError("unknown object label " + label);
    }

    // FNV-1a over the ordered label lists; used to detect files produced
    // against a different vocabulary.
    std::string hash() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 0x100000001b3ULL;
            }
            h ^= 0xffU;
            h *= 0x100000001b3ULL;
        };
        for (const auto& s : objects_) mix(s);
        mix("\x01predicates");
        for (const auto& s : predicates_) mix(s);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.objects_ == b.objects_ && a.predicates_ == b.predicates_;
    }

private:
    static void index_labels(const std::vector<std::string>& labels,
                             std::unordered_map<std::string, std::size_t>& index,
                             const char* kind) {
        index.reserve(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!index.emplace(labels[i], i).second) {
                throw ValidationError(std::string("duplicate ") + kind + " label " + labels[i]);
            }
        }
    }

    std::vector<std::string> objects_;
    std::vector<std::string> predicates_;
    std::unordered_map<std::string, std::size_t> object_index_;
    std::unordered_map<std::string, std::size_t> predicate_index_;
};

inline Vocabulary vocabulary_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("objects") || !doc.contains("predicates")) {
        throw ValidationError("vocabulary document needs 'objects' and 'predicates' arrays");
    }
    try {
        return Vocabulary(doc.at("objects").get<std::vector<std::string>>(),
                          doc.at("predicates").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed vocabulary: ") + e.what());
    }
}

inline nlohmann::json vocabulary_to_json(const Vocabulary& vocab) {
    return {{"objects", vocab.objects()}, {"predicates", vocab.predicates()}};
}

// Reads a JSON document of the form {"objects": [...], "predicates": [...]}.
inline Vocabulary load_vocabulary(std::istream& in) {
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed vocabulary: ") + e.what());
    }
    return vocabulary_from_json(doc);
}

} // namespace triplet_debias
