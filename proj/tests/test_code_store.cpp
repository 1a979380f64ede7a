#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "tfdl/code_store.hpp"
#include "tfdl/error.hpp"

using namespace tfdl;

namespace {

std::vector<SparseCode> random_codes(std::size_t rows, std::uint32_t m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> value(0.01, 2.0);
    std::vector<SparseCode> codes(rows);
    for (auto& code : codes) {
        for (std::uint32_t f = 0; f < m; ++f) {
            if (rng() % 5 == 0) {
                code.entries.push_back({f, value(rng)});
            }
        }
    }
    return codes;
}

}  // namespace

TEST_CASE("round trip is bit exact") {
    test::TempDir dir;
    CodeStoreInfo info;
    info.num_rows = 300;
    info.m = 40;
    info.dict_hash = 0x1234abcdULL;
    info.store_hash = 0xfeedULL;
    info.num_layers = 3;
    const auto codes = random_codes(300, 40, 1);
    const CodeStore cs = CodeStore::from_codes(info, codes);
    cs.write(dir / "codes.tfcs");
    const CodeStore back = CodeStore::read(dir / "codes.tfcs");
    CHECK(back == cs);
    back.write(dir / "again.tfcs");
    std::ifstream a(dir / "codes.tfcs", std::ios::binary), b(dir / "again.tfcs", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

    for (std::uint64_t row = 0; row < 300; ++row) {
        const auto& entries = codes[row].entries;
        REQUIRE(cs.row_factors(row).size() == entries.size());
        for (std::size_t k = 0; k < entries.size(); ++k) {
            CHECK(cs.row_factors(row)[k] == entries[k].factor);
            CHECK(cs.value(row, entries[k].factor) == static_cast<float>(entries[k].value));
        }
    }
}

TEST_CASE("file layout") {
    test::TempDir dir;
    CodeStoreInfo info;
    info.num_rows = 2;
    info.m = 4;
    std::vector<SparseCode> codes(2);
    codes[1].entries = {{3, 0.5}};
    CodeStore::from_codes(info, codes).write(dir / "c.tfcs");
    std::ifstream in(dir / "c.tfcs", std::ios::binary);
    const std::string bytes(std::istreambuf_iterator<char>(in), {});
    // magic + version + num_rows + m + two hashes + num_layers + two doubles + count + one triplet
    REQUIRE(bytes.size() == 4 + 4 + 8 + 4 + 8 + 8 + 4 + 8 + 8 + 8 + 16);
    CHECK(bytes.substr(0, 4) == "TFCS");
    std::uint64_t row = 0;
    std::uint32_t factor = 0;
    float value = 0;
    std::memcpy(&row, bytes.data() + bytes.size() - 16, 8);
    std::memcpy(&factor, bytes.data() + bytes.size() - 8, 4);
    std::memcpy(&value, bytes.data() + bytes.size() - 4, 4);
    CHECK(row == 1);
    CHECK(factor == 3);
    CHECK(value == 0.5f);
}

TEST_CASE("drop threshold is applied on construction") {
    CodeStoreInfo info;
    info.num_rows = 1;
    info.m = 3;
    info.drop_threshold = 0.1;
    std::vector<SparseCode> codes(1);
    codes[0].entries = {{0, 0.05}, {1, 0.1}, {2, 0.2}};
    const CodeStore cs = CodeStore::from_codes(info, codes);
    CHECK(cs.num_triplets() == 1);
    CHECK(cs.value(0, 2) == 0.2f);
    CHECK(cs.value(0, 0) == 0.0f);
}

TEST_CASE("append extends rows") {
    CodeStoreInfo info;
    info.num_rows = 10;
    info.m = 8;
    const auto codes = random_codes(15, 8, 4);
    CodeStore grown = CodeStore::from_codes(info, std::span(codes).first(10));
    grown.append(std::span(codes).subspan(10));
    info.num_rows = 15;
    CHECK(grown == CodeStore::from_codes(info, codes));
}

TEST_CASE("invalid content is rejected") {
    CodeStoreInfo info;
    info.num_rows = 1;
    info.m = 2;
    std::vector<SparseCode> codes(1);
    codes[0].entries = {{5, 1.0}};
    CHECK_THROWS_AS(CodeStore::from_codes(info, codes), FormatError);
    codes[0].entries = {{1, 1.0}, {0, 1.0}};
    CHECK_THROWS_AS(CodeStore::from_codes(info, codes), FormatError);

    codes[0].entries = {{1, 1.0}};
    const CodeStore cs = CodeStore::from_codes(info, codes);
    CHECK_THROWS_AS(cs.row_factors(1), FormatError);

    test::TempDir dir;
    cs.write(dir / "c.tfcs");
    std::filesystem::resize_file(dir / "c.tfcs", std::filesystem::file_size(dir / "c.tfcs") - 3);
    CHECK_THROWS_AS(CodeStore::read(dir / "c.tfcs"), FormatError);
    {
        std::ofstream(dir / "bad.tfcs", std::ios::binary) << "NOPE";
    }
    CHECK_THROWS_WITH_AS(CodeStore::read(dir / "bad.tfcs"), doctest::Contains("magic"), FormatError);
    CHECK_THROWS_AS(CodeStore::read(dir / "missing.tfcs"), FormatError);
}
