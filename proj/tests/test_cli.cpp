#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "tfdl/analysis.hpp"
#include "tfdl/binary_io.hpp"
#include "tfdl/cli.hpp"
#include "tfdl/code_store.hpp"
#include "tfdl/dictionary_learner.hpp"
#include "tfdl/lime_saliency.hpp"

using namespace tfdl;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run tfdl_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const test::TempDir& dir, const std::string& name) { return (dir / name).string(); }

nlohmann::json sidecar(const std::string& artifact) {
    std::ifstream in(artifact + ".json");
    return nlohmann::json::parse(in);
}

/// Small synthetic store plus a learned dictionary.
void prepare(const test::TempDir& dir, std::uint64_t occurrences = 600) {
    REQUIRE(tfdl_run({"synth", "--out", p(dir, "store"), "--d", "8", "--m", "12", "--occurrences",
                      std::to_string(occurrences), "--layers", "3", "--seq-len", "10", "--vocab", "30", "--seed", "4"})
                .code == 0);
    REQUIRE(tfdl_run({"learn", "--store", p(dir, "store"), "--out", p(dir, "dict.tfdc"), "--m", "12", "--lambda",
                      "0.1", "--steps", "80", "--batch-size", "16", "--seed", "1"})
                .code == 0);
}

}  // namespace

TEST_CASE("help on every subcommand") {
    for (const char* sub : {"synth", "learn", "encode", "importance", "top", "classify", "lime", "report", "posclf"}) {
        const Run r = tfdl_run({sub, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("--seed") != std::string::npos);
    }
    CHECK(tfdl_run({"--help"}).code == 0);
}

TEST_CASE("usage errors exit 1") {
    CHECK(tfdl_run({}).code == 1);
    CHECK(tfdl_run({"learn", "--bogus"}).code == 1);
    CHECK(tfdl_run({"frobnicate"}).code == 1);
    CHECK(tfdl_run({"learn", "--store", "x"}).code == 1);
}

TEST_CASE("missing input names the stage and exits 2") {
    test::TempDir dir;
    const Run r = tfdl_run({"learn", "--store", p(dir, "nope"), "--out", p(dir, "d.tfdc")});
    CHECK(r.code == 2);
    CHECK(r.err.rfind("tfdl learn: error:", 0) == 0);
}

TEST_CASE("pipeline end to end") {
    test::TempDir dir;
    prepare(dir);
    CHECK(sidecar(p(dir, "dict.tfdc"))["seed"] == 1);

    Run r = tfdl_run({"encode", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--out", p(dir, "codes.tfcs"),
                      "--threads", "2"});
    REQUIRE(r.code == 0);
    const CodeStore codes = CodeStore::read(p(dir, "codes.tfcs"));
    CHECK(codes.num_rows() == 1800);
    CHECK(codes.info().dict_hash == read_dictionary(p(dir, "dict.tfdc")).dict.content_hash());
    CHECK(sidecar(p(dir, "codes.tfcs"))["lambda"] == 0.1);

    REQUIRE(tfdl_run({"importance", "--codes", p(dir, "codes.tfcs"), "--out", p(dir, "curves.csv")}).code == 0);
    const auto curves = read_curves_csv(p(dir, "curves.csv"));
    CHECK(curves.size() == 12);
    CHECK(curves == importance_scores(codes));

    REQUIRE(tfdl_run({"top", "--codes", p(dir, "codes.tfcs"), "--store", p(dir, "store"), "--factor", "0", "--out",
                      p(dir, "top.csv"), "--top-k", "5"})
                .code == 0);
    REQUIRE(tfdl_run({"classify", "--curves", p(dir, "curves.csv"), "--out", p(dir, "labels.csv")}).code == 0);
    std::ifstream labels(p(dir, "labels.csv"));
    std::size_t lines = 0;
    for (std::string line; std::getline(labels, line);) {
        ++lines;
    }
    CHECK(lines == 13);

    r = tfdl_run({"lime", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--occ", "3", "--layer", "1",
                  "--factor", "2", "--n-samples", "50", "--out", p(dir, "sal.jsonl"), "--work-dir", p(dir, "work"),
                  "--provider-cmd", std::string(TFDL_FAKE_EXTRACTOR) + " {request} {response} 8"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto records = read_saliency_records(p(dir, "sal.jsonl"));
    REQUIRE(records.size() == 1);
    CHECK(records[0].map.weights.size() == 10);
    CHECK(records[0].lambda == 0.1);

    r = tfdl_run({"report", "--store", p(dir, "store"), "--codes", p(dir, "codes.tfcs"), "--curves",
                  p(dir, "curves.csv"), "--saliency", p(dir, "sal.jsonl"), "--out", p(dir, "report"), "--num-factors",
                  "4"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(std::filesystem::exists(dir / "report" / "index.html"));
    CHECK(std::filesystem::exists(dir / "report" / "curves.svg"));
    CHECK(std::filesystem::exists(dir / "report" / "factors" / "00002.html"));

    // Re-running with the same inputs reproduces the artifacts byte for byte.
    REQUIRE(tfdl_run({"learn", "--store", p(dir, "store"), "--out", p(dir, "dict2.tfdc"), "--m", "12", "--lambda",
                      "0.1", "--steps", "80", "--batch-size", "16", "--seed", "1"})
                .code == 0);
    CHECK(io::hash_file(dir / "dict.tfdc") == io::hash_file(dir / "dict2.tfdc"));
    REQUIRE(tfdl_run({"report", "--store", p(dir, "store"), "--codes", p(dir, "codes.tfcs"), "--curves",
                      p(dir, "curves.csv"), "--saliency", p(dir, "sal.jsonl"), "--out", p(dir, "report2"),
                      "--num-factors", "4"})
                .code == 0);
    CHECK(io::hash_file(dir / "report" / "index.html") == io::hash_file(dir / "report2" / "index.html"));
    CHECK(io::hash_file(dir / "report" / "factors" / "00002.html") ==
          io::hash_file(dir / "report2" / "factors" / "00002.html"));
}

TEST_CASE("lime request/response exchange in two steps") {
    test::TempDir dir;
    prepare(dir, 100);
    Run r = tfdl_run({"lime", "--store", p(dir, "store"), "--occ", "5", "--layer", "0", "--n-samples", "30",
                      "--seed", "2", "--request-out", p(dir, "req.jsonl")});
    REQUIRE(r.code == 0);
    const std::string cmd = std::string(TFDL_FAKE_EXTRACTOR) + " " + p(dir, "req.jsonl") + " " + p(dir, "resp") + " 8";
    REQUIRE(std::system(cmd.c_str()) == 0);
    r = tfdl_run({"lime", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--occ", "5", "--layer", "0",
                  "--factor", "1", "--n-samples", "30", "--seed", "2", "--response", p(dir, "resp"), "--out",
                  p(dir, "sal.jsonl")});
    CHECK_MESSAGE(r.code == 0, r.err);
    // A response for a different seed does not line up with the request.
    r = tfdl_run({"lime", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--occ", "5", "--layer", "0",
                  "--factor", "1", "--n-samples", "30", "--seed", "3", "--response", p(dir, "resp"), "--out",
                  p(dir, "sal.jsonl")});
    CHECK(r.code == 2);
    CHECK(r.err.find("does not echo") != std::string::npos);
    CHECK(tfdl_run({"lime", "--store", p(dir, "store"), "--occ", "5", "--layer", "0"}).code == 1);
}

TEST_CASE("encode --extend") {
    test::TempDir dir;
    prepare(dir);
    REQUIRE(tfdl_run({"learn", "--store", p(dir, "store"), "--out", p(dir, "other.tfdc"), "--m", "12", "--lambda",
                      "0.1", "--steps", "5", "--batch-size", "16", "--seed", "9"})
                .code == 0);

    // The first half of the corpus, encoded on its own.
    const auto full = EmbeddingStore::open(dir / "store");
    std::vector<OccurrenceRecord> half;
    SequenceTable seqs;
    for (std::uint64_t o = 0; o < 300; ++o) {
        half.push_back(full.record(o));
        seqs[half.back().meta.seq_id] = full.sequence(half.back().meta.seq_id);
    }
    write_store(dir / "half", half, seqs, full.d(), full.num_layers(), full.attributes());
    REQUIRE(tfdl_run({"encode", "--store", p(dir, "half"), "--dict", p(dir, "dict.tfdc"), "--out", p(dir, "half.tfcs")})
                .code == 0);

    const Run bad = tfdl_run({"encode", "--store", p(dir, "store"), "--dict", p(dir, "other.tfdc"), "--out",
                              p(dir, "x.tfcs"), "--extend", p(dir, "half.tfcs")});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("hash mismatch") != std::string::npos);

    REQUIRE(tfdl_run({"encode", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--out", p(dir, "ext.tfcs"),
                      "--extend", p(dir, "half.tfcs")})
                .code == 0);
    REQUIRE(tfdl_run({"encode", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--out", p(dir, "all.tfcs")})
                .code == 0);
    CHECK(CodeStore::read(p(dir, "ext.tfcs")) == CodeStore::read(p(dir, "all.tfcs")));
}

TEST_CASE("top refuses codes from a different store") {
    test::TempDir dir;
    prepare(dir, 100);
    REQUIRE(tfdl_run({"encode", "--store", p(dir, "store"), "--dict", p(dir, "dict.tfdc"), "--out", p(dir, "c.tfcs")})
                .code == 0);
    REQUIRE(tfdl_run({"synth", "--out", p(dir, "other"), "--d", "8", "--occurrences", "100", "--layers", "3",
                      "--seed", "8"})
                .code == 0);
    const Run r = tfdl_run({"top", "--codes", p(dir, "c.tfcs"), "--store", p(dir, "other"), "--factor", "0", "--out",
                            p(dir, "t.csv")});
    CHECK(r.code == 2);
}

TEST_CASE("posclf") {
    test::TempDir dir;
    {
        std::ofstream out(dir / "in.csv");
        out << "activation,label\n";
        for (int i = 0; i < 10; ++i) {
            out << "0.0,0\n5.0,1\n";
        }
    }
    const Run r = tfdl_run({"posclf", "--input", p(dir, "in.csv"), "--out", p(dir, "clf.json")});
    REQUIRE(r.code == 0);
    std::ifstream in(dir / "clf.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["f1"] == 1.0);
}
