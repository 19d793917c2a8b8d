#pragma once

#include "triplet_debias/triplet_debias.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace td_test {

using namespace triplet_debias;

inline Vocabulary make_vocab(std::size_t ne, std::size_t nr) {
    std::vector<std::string> objects, predicates;
    for (std::size_t i = 0; i < ne; ++i) objects.push_back("e" + std::to_string(i));
    for (std::size_t i = 0; i < nr; ++i) predicates.push_back("r" + std::to_string(i));
    return Vocabulary(objects, predicates);
}

// Random distribution; with zero_prob each entry is independently zeroed
// (at least one entry stays positive).
inline std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n, double zero_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    std::bernoulli_distribution zero(zero_prob);
    std::vector<double> v(n);
    double sum = 0.0;
    for (auto& x : v) {
        x = zero(rng) ? 0.0 : u(rng);
        sum += x;
    }
    if (sum == 0.0) {
        v[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
        sum = 1.0;
    }
    for (auto& x : v) x /= sum;
    return v;
}

inline std::vector<double> one_hot(std::size_t n, std::size_t i) {
    std::vector<double> v(n, 0.0);
    v[i] = 1.0;
    return v;
}

// Random sparse counts over a random subset of cells.
inline TripletCounts random_counts(std::mt19937_64& rng, std::size_t ne, std::size_t nr, double density = 0.3) {
    std::bernoulli_distribution keep(density);
    std::uniform_int_distribution<int> count(1, 20);
    TripletCounts c;
    for (std::size_t s = 0; s < ne; ++s)
        for (std::size_t r = 0; r < nr; ++r)
            for (std::size_t o = 0; o < ne; ++o)
                if (keep(rng)) c.valid[{s, r, o}] = count(rng);
    if (c.valid.empty()) c.valid[{0, 0, ne > 1 ? std::size_t{1} : std::size_t{0}}] = 1;
    return c;
}

inline PriorModel random_prior(std::mt19937_64& rng, std::size_t ne, std::size_t nr) {
    return estimate_prior(random_counts(rng, ne, nr), make_vocab(ne, nr));
}

inline MeasurementGraph random_graph(std::mt19937_64& rng, std::size_t ne, std::size_t nr, std::size_t n_entities,
                                     std::size_t n_pairs, double zero_prob = 0.0, bool one_hot_entities = false) {
    MeasurementGraph g;
    g.image_id = "img" + std::to_string(rng() % 1000000);
    std::uniform_real_distribution<double> coord(0.0, 100.0);
    std::uniform_int_distribution<std::size_t> label(0, ne - 1);
    for (std::size_t i = 0; i < n_entities; ++i) {
        const double x = coord(rng), y = coord(rng);
        g.entities.push_back({BoundingBox(x, y, x + 1.0 + coord(rng), y + 1.0 + coord(rng)),
                              one_hot_entities ? one_hot(ne, label(rng)) : random_distribution(rng, ne, zero_prob)});
    }
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t a = 0; a < n_entities; ++a)
        for (std::size_t b = 0; b < n_entities; ++b)
            if (a != b) all.emplace_back(a, b);
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t i = 0; i < std::min(n_pairs, all.size()); ++i) {
        g.pairs.push_back({all[i].first, all[i].second, random_distribution(rng, nr, zero_prob)});
    }
    return g;
}

class TempDir {
public:
    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("td_test_" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }

    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(file(name), std::ios::binary) << content;
        return file(name);
    }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace td_test

namespace td_test {

// Counts over every (s,o) pair for a small vocabulary plus out-of-vocabulary
// relationships "x0".."x{n_invalid-1}", and a unit-vector embedding for every
// rendered triplet text. Vectors within one (s,o) pair cluster around a
// common direction so cosine distances spread over roughly [0, 0.3].
struct AugmentSetup {
    Vocabulary vocab;
    TripletCounts counts;
    EmbeddingTable table;
};

inline AugmentSetup random_augment_setup(std::mt19937_64& rng, std::size_t ne, std::size_t nr,
                                         std::size_t n_invalid, std::size_t dim = 6) {
    auto vocab = make_vocab(ne, nr);
    TripletCounts counts;
    EmbeddingTable table(dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> spread(0.05, 0.6);
    std::bernoulli_distribution keep(0.5);
    std::uniform_int_distribution<int> count(1, 9);
    auto unit = [&](std::vector<double> v) {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        return v;
    };
    for (std::size_t s = 0; s < ne; ++s) {
        for (std::size_t o = 0; o < ne; ++o) {
            std::vector<double> base(dim);
            for (double& x : base) x = gauss(rng);
            base = unit(base);
            const double sigma = spread(rng);
            auto add = [&](const std::string& rel) {
                std::vector<double> v(dim);
                for (std::size_t d = 0; d < dim; ++d) v[d] = base[d] + sigma * gauss(rng);
                table.add(render_triplet_text(vocab.object_label(s), rel, vocab.object_label(o)), unit(v));
            };
            for (std::size_t r = 0; r < nr; ++r) {
                add(vocab.predicate_label(r));
                if (keep(rng)) counts.valid[{s, r, o}] = count(rng);
            }
            for (std::size_t x = 0; x < n_invalid; ++x) {
                add("x" + std::to_string(x));
                if (keep(rng)) counts.invalid[{s, "x" + std::to_string(x), o}] = count(rng);
            }
        }
    }
    return {std::move(vocab), std::move(counts), std::move(table)};
}

} // namespace td_test
