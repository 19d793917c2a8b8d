#include "test_support.hpp"
#include "triplet_debias/cli.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>
#include <sys/wait.h>

using namespace triplet_debias;

namespace {

struct Result {
    int code = 0;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "triplet-debias");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

const char* kVocab = R"({"objects": ["man", "horse", "bike"], "predicates": ["on", "riding"]})";

const char* kCounts = R"({"subject": "man", "relationship": "on", "object": "horse", "count": 7}
{"subject": "man", "relationship": "riding", "object": "horse", "count": 3}
{"subject": "man", "relationship": "on", "object": "bike", "count": 8}
{"subject": "man", "relationship": "riding", "object": "bike", "count": 2}
{"subject": "man", "relationship": "sitting on", "object": "bike", "count": 4}
)";

// Two images; the first pair of each is ambiguous between the predicates.
const char* kMeasurements =
    R"({"image_id": "a", "entities": [{"box": {"x1": 0, "y1": 0, "x2": 10, "y2": 10}, "class_probs": [0.8, 0.1, 0.1]}, )"
    R"({"box": {"x1": 5, "y1": 5, "x2": 20, "y2": 20}, "class_probs": [0.1, 0.2, 0.7]}], )"
    R"("pairs": [{"subject_index": 0, "object_index": 1, "rel_probs": [0.45, 0.55]}]})"
    "\n"
    R"({"image_id": "b", "entities": [{"box": {"x1": 0, "y1": 0, "x2": 4, "y2": 4}, "class_probs": [0.7, 0.2, 0.1]}, )"
    R"({"box": {"x1": 1, "y1": 1, "x2": 9, "y2": 9}, "class_probs": [0.1, 0.6, 0.3]}], )"
    R"("pairs": [{"subject_index": 0, "object_index": 1, "rel_probs": [0.4, 0.6]}, )"
    R"({"subject_index": 1, "object_index": 0, "rel_probs": [0.9, 0.1]}]})"
    "\n";

const char* kGroundTruth =
    R"({"image_id": "a", "entities": [{"box": {"x1": 0, "y1": 0, "x2": 10, "y2": 10}, "label": 0}, )"
    R"({"box": {"x1": 5, "y1": 5, "x2": 20, "y2": 20}, "label": 2}], "relations": [{"subject_index": 0, "object_index": 1, "rel": 0}]})"
    "\n"
    R"({"image_id": "b", "entities": [{"box": {"x1": 0, "y1": 0, "x2": 4, "y2": 4}, "label": 0}, )"
    R"({"box": {"x1": 1, "y1": 1, "x2": 9, "y2": 9}, "label": 1}], "relations": [{"subject_index": 0, "object_index": 1, "rel": 0}]})"
    "\n";

std::string vocab_hash() {
    std::istringstream in(kVocab);
    return load_vocabulary(in).hash();
}

class CliTest : public ::testing::Test {
protected:
    td_test::TempDir dir;
    std::string vocab = dir.write("vocab.json", kVocab);
    std::string counts = dir.write("counts.jsonl", kCounts);
    std::string measurements = dir.write("measurements.jsonl", kMeasurements);
    std::string ground_truth = dir.write("gt.jsonl", kGroundTruth);

    std::string embeddings(double distance) {
        const double c = 1.0 - distance, s = std::sqrt(1.0 - c * c);
        std::ostringstream os;
        os << R"({"dimension": 2})" << '\n';
        for (const char* t : {"man on horse", "man riding horse", "man on bike", "man riding bike"}) {
            os << R"({"text": ")" << t << R"(", "vector": [1, 0]})" << '\n';
        }
        os << R"({"text": "man sitting on bike", "vector": [)" << nlohmann::json(c).dump() << ", "
           << nlohmann::json(s).dump() << "]}\n";
        return dir.write("emb.jsonl", os.str());
    }
};

} // namespace

TEST_F(CliTest, LearnWritesPrior) {
    const auto prior_path = dir.file("prior.json");
    const auto r = run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior_path});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("valid triplets: 20"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("out-of-vocabulary triplets: 4"), std::string::npos) << r.out;
    auto in = open_input(prior_path);
    const auto prior = load_prior(in);
    EXPECT_NEAR(prior.conditional(0, 1)[0], 0.7, 1e-15);
    EXPECT_NEAR(prior.conditional(0, 2)[1], 0.2, 1e-15);
    EXPECT_EQ(prior.seen_triplets().size(), 4u);
}

TEST_F(CliTest, MissingInputIsIoError) {
    const auto missing = dir.file("nope.jsonl");
    const auto r = run_cli({"learn", "--counts", missing, "--vocab", vocab, "--out", dir.file("p.json")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST_F(CliTest, MalformedInputIsValidationError) {
    const auto bad = dir.write("bad.jsonl", R"({"subject": "man", "relationship": "on"})");
    EXPECT_EQ(run_cli({"learn", "--counts", bad, "--vocab", vocab, "--out", dir.file("p.json")}).code, 1);
    const auto unknown = dir.write("unknown.jsonl", R"({"subject": "cat", "relationship": "on", "object": "bike"})");
    const auto r = run_cli({"learn", "--counts", unknown, "--vocab", vocab, "--out", dir.file("p.json")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("cat"), std::string::npos) << r.err;
    EXPECT_EQ(run_cli({"learn", "--counts", counts}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
}

TEST_F(CliTest, AugmentRespectsRadius) {
    const auto emb = embeddings(0.03);
    const auto out0 = dir.file("aug0.jsonl");
    ASSERT_EQ(run_cli({"augment", "--counts", counts, "--vocab", vocab, "--embeddings", emb, "--out", out0,
                       "--epsilon", "0"})
                  .code,
              0);
    {
        auto in = open_input(out0);
        const auto back = accumulate_counts(load_annotations(in), Vocabulary({"man", "horse", "bike"}, {"on", "riding"}));
        auto orig_in = open_input(counts);
        EXPECT_EQ(back, accumulate_counts(load_annotations(orig_in), Vocabulary({"man", "horse", "bike"}, {"on", "riding"})));
    }
    const auto out = dir.file("aug.jsonl");
    const auto r = run_cli({"augment", "--counts", counts, "--vocab", vocab, "--embeddings", emb, "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("valid triplets: 20 -> 28"), std::string::npos) << r.out;
    const auto text = td_test::slurp(out);
    EXPECT_NE(text.find(R"({"count":12,"object":"bike","relationship":"on","subject":"man"})"), std::string::npos)
        << text;
    EXPECT_NE(text.find(R"("relationship":"sitting on")"), std::string::npos);
}

TEST_F(CliTest, InferZeroThresholdIsBaseline) {
    const auto prior = dir.file("prior.json");
    ASSERT_EQ(run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior}).code, 0);
    const auto out = dir.file("pred.jsonl");
    const auto r = run_cli({"infer", "--prior", prior, "--measurements", measurements, "--out", out,
                            "--entropy-threshold", "0", "--workers", "2"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("images: 2,"), std::string::npos) << r.out;
    std::istringstream min(kMeasurements);
    std::string expected;
    for (const auto& g : load_measurements(min)) expected += to_json(baseline_graph(g)).dump() + "\n";
    EXPECT_EQ(td_test::slurp(out), expected);
}

TEST_F(CliTest, InferRefinesAmbiguousPairs) {
    const auto prior = dir.file("prior.json");
    ASSERT_EQ(run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior}).code, 0);
    const auto out = dir.file("pred.jsonl");
    ASSERT_EQ(run_cli({"infer", "--prior", prior, "--measurements", measurements, "--out", out, "--vocab", vocab}).code,
              0);
    auto in = open_input(out);
    const auto preds = load_debiased(in);
    ASSERT_EQ(preds.size(), 2u);
    // rel (0.45, 0.55) flips to "on" under P(on | man, bike) = 0.8
    EXPECT_EQ(preds[0].triplets[0].rel_label, 0u);
    EXPECT_EQ(preds[0].entity_labels, (std::vector<EntityLabel>{0, 2}));
}

TEST_F(CliTest, InferHandlesEmptyInput) {
    const auto prior = dir.file("prior.json");
    ASSERT_EQ(run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior}).code, 0);
    const auto empty = dir.write("empty.jsonl", "");
    const auto out = dir.file("pred.jsonl");
    const auto r = run_cli({"infer", "--prior", prior, "--measurements", empty, "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("images: 0,"), std::string::npos);
    EXPECT_EQ(td_test::slurp(out), "");
}

TEST_F(CliTest, InferRejectsVocabularyMismatch) {
    const auto prior = dir.file("prior.json");
    ASSERT_EQ(run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior}).code, 0);
    const auto headed = dir.write("headed.jsonl", std::string(R"({"vocabulary_hash": "fnv1a64:0000000000000000"})") +
                                                      "\n" + kMeasurements);
    auto r = run_cli({"infer", "--prior", prior, "--measurements", headed, "--out", dir.file("x.jsonl")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("vocabulary hash mismatch"), std::string::npos) << r.err;

    const auto other = dir.write("other.json", R"({"objects": ["man", "bike", "horse"], "predicates": ["on", "riding"]})");
    r = run_cli({"infer", "--prior", prior, "--measurements", measurements, "--out", dir.file("x.jsonl"), "--vocab",
                 other});
    EXPECT_EQ(r.code, 1);

    const auto good_header = dir.write(
        "good.jsonl", R"({"vocabulary_hash": ")" + vocab_hash() +
                          "\"}\n" + kMeasurements);
    EXPECT_EQ(run_cli({"infer", "--prior", prior, "--measurements", good_header, "--out", dir.file("x.jsonl")}).code, 0);
}

TEST_F(CliTest, EvalReportsRecall) {
    const auto prior = dir.file("prior.json");
    ASSERT_EQ(run_cli({"learn", "--counts", counts, "--vocab", vocab, "--out", prior}).code, 0);
    const auto pred = dir.file("pred.jsonl");
    ASSERT_EQ(run_cli({"infer", "--prior", prior, "--measurements", measurements, "--out", pred}).code, 0);
    const auto report = dir.file("report.json");
    const auto csv = dir.file("pp.csv");
    const auto r = run_cli({"eval", "--predictions", pred, "--ground-truth", ground_truth, "--prior", prior, "--k",
                            "1,50", "--report", report, "--per-predicate-csv", csv, "--zero-shot"});
    ASSERT_EQ(r.code, 0) << r.err;
    auto in = open_input(report);
    nlohmann::json doc;
    in >> doc;
    ASSERT_EQ(doc["results"].size(), 2u);
    EXPECT_EQ(doc["results"][0]["k"], 1);
    EXPECT_TRUE(doc["results"][1]["recall"].is_number());
    EXPECT_EQ(td_test::slurp(csv).rfind("predicate,recall@1,recall@50\non,", 0), 0u) << td_test::slurp(csv);
}

TEST_F(CliTest, EvalPerfectPredictions) {
    std::istringstream gin(kGroundTruth);
    std::string preds;
    for (const auto& g : load_ground_truth(gin)) {
        DebiasedGraph d;
        d.image_id = g.image_id;
        for (const auto& e : g.entities) {
            d.entity_labels.push_back(e.label);
            d.entity_boxes.push_back(e.box);
        }
        for (const auto& rel : g.relations) {
            d.triplets.push_back({rel.subject_index, rel.object_index, d.entity_labels[rel.subject_index],
                                  d.entity_labels[rel.object_index], rel.rel, 1.0});
        }
        preds += to_json(d).dump() + "\n";
    }
    const auto pred = dir.write("perfect.jsonl", preds);
    const auto report = dir.file("report.json");
    ASSERT_EQ(run_cli({"eval", "--predictions", pred, "--ground-truth", ground_truth, "--report", report}).code, 0);
    auto in = open_input(report);
    nlohmann::json doc;
    in >> doc;
    for (const auto& row : doc["results"]) {
        EXPECT_EQ(row["recall"], 1.0);
        EXPECT_EQ(row["mean_recall"], 1.0);
    }
}

TEST_F(CliTest, ZeroShotNeedsPrior) {
    const auto r = run_cli({"eval", "--predictions", ground_truth, "--ground-truth", ground_truth, "--zero-shot"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--prior"), std::string::npos) << r.err;
}

TEST_F(CliTest, PipelineMatchesSeparateCommands) {
    const auto emb = embeddings(0.03);
    const auto cfg = dir.write("run.json", nlohmann::json{{"vocab", vocab},
                                                          {"counts", counts},
                                                          {"embeddings", emb},
                                                          {"measurements", measurements},
                                                          {"ground-truth", ground_truth},
                                                          {"out-dir", dir.file("ignored")},
                                                          {"k", {20, 50}},
                                                          {"workers", 3}}
                                               .dump());
    const auto out_dir = dir.file("run");
    const auto r = run_cli({"pipeline", "--config", cfg, "--out-dir", out_dir});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_FALSE(std::filesystem::exists(dir.file("ignored")));

    const auto aug = dir.file("aug.jsonl"), prior = dir.file("prior.json"), pred = dir.file("pred.jsonl"),
               report = dir.file("report.json"), csv = dir.file("pp.csv");
    ASSERT_EQ(run_cli({"augment", "--counts", counts, "--vocab", vocab, "--embeddings", emb, "--out", aug}).code, 0);
    ASSERT_EQ(run_cli({"learn", "--counts", aug, "--vocab", vocab, "--out", prior}).code, 0);
    ASSERT_EQ(run_cli({"infer", "--prior", prior, "--measurements", measurements, "--out", pred, "--workers", "1"}).code,
              0);
    ASSERT_EQ(run_cli({"eval", "--predictions", pred, "--ground-truth", ground_truth, "--prior", prior, "--k", "20,50",
                       "--report", report, "--per-predicate-csv", csv})
                  .code,
              0);
    const std::filesystem::path d(out_dir);
    EXPECT_EQ(td_test::slurp((d / "augmented_counts.jsonl").string()), td_test::slurp(aug));
    EXPECT_EQ(td_test::slurp((d / "prior.json").string()), td_test::slurp(prior));
    EXPECT_EQ(td_test::slurp((d / "predictions.jsonl").string()), td_test::slurp(pred));
    EXPECT_EQ(td_test::slurp((d / "report.json").string()), td_test::slurp(report));
    EXPECT_EQ(td_test::slurp((d / "per_predicate.csv").string()), td_test::slurp(csv));
}

TEST_F(CliTest, PipelineRejectsBadConfig) {
    const auto cfg = dir.write("run.json", R"({"colour": "blue"})");
    EXPECT_EQ(run_cli({"pipeline", "--config", cfg}).code, 1);
    EXPECT_EQ(run_cli({"pipeline", "--vocab", vocab}).code, 1);
}

TEST(CliBinary, VersionAndExitCodes) {
    const std::string exe = TD_CLI_PATH;
    FILE* pipe = popen((exe + " --version").c_str(), "r");
    ASSERT_NE(pipe, nullptr);
    char buf[256] = {};
    const std::string line = fgets(buf, sizeof(buf), pipe) ? buf : "";
    EXPECT_EQ(WEXITSTATUS(pclose(pipe)), 0);
    EXPECT_EQ(line, "triplet-debias 1.0.0 (prior format 1, record format 1)\n");

    const int missing = std::system((exe + " learn --counts /nonexistent/c.jsonl --vocab /nonexistent/v.json --out "
                                           "/tmp/td_unused.json 2>/dev/null")
                                        .c_str());
    EXPECT_EQ(WEXITSTATUS(missing), 2);
    const int bad_flag = std::system((exe + " infer --bogus 2>/dev/null >/dev/null").c_str());
    EXPECT_EQ(WEXITSTATUS(bad_flag), 1);
}
