#include <random>

#include "doctest.h"
#include "support.hpp"
#include "tfdl/code_store.hpp"
#include "tfdl/error.hpp"
#include "tfdl/sparse_coder.hpp"

using namespace tfdl;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = normal(rng);
    }
    return v;
}

Dictionary identity_dict(Eigen::Index d) { return Dictionary{MatrixXd::Identity(d, d), 0.1, std::nullopt}; }

}  // namespace

TEST_CASE("soft threshold") {
    VectorXd v(3);
    v << 2.0, -1.0, 0.3;
    VectorXd out = nonneg_soft_threshold(v, 0.5);
    CHECK(out(0) == 1.5);
    CHECK(out(1) == 0.0);
    CHECK(out(2) == 0.0);
    CHECK(nonneg_soft_threshold(v, 0.0) == v.cwiseMax(0.0));
    CHECK(nonneg_soft_threshold(VectorXd::Zero(3), 0.7).isZero());
}

TEST_CASE("objective") {
    Dictionary dict = identity_dict(2);
    VectorXd x(2);
    x << 3, 4;
    CHECK(objective(x, dict, VectorXd::Zero(2), 1.0) == 12.5);
    CHECK(objective(x, dict, x, 0.0) == 0.0);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Dictionary d{test::random_unit_columns(7, 13, rng), 0.2, std::nullopt};
        VectorXd xx = random_vector(7, rng);
        VectorXd a = random_vector(13, rng).cwiseAbs();
        const double want = test::naive_objective(d.phi, xx, a, 0.2);
        CHECK(objective(xx, d, a, 0.2) == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS(objective(VectorXd::Zero(3), dict, VectorXd::Zero(2), 1.0));
}

TEST_CASE("lipschitz constant is the top eigenvalue of the Gram matrix") {
    std::mt19937_64 rng(5);
    const MatrixXd phi = test::random_unit_columns(8, 16, rng);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(phi.transpose() * phi);
    CHECK(lipschitz_constant(phi) == doctest::Approx(eig.eigenvalues().maxCoeff()).epsilon(1e-6));
    CHECK(lipschitz_constant(MatrixXd::Identity(4, 4)) == doctest::Approx(1.0));
}

TEST_CASE("zero input gives an empty code") {
    std::mt19937_64 rng(1);
    Dictionary dict{test::random_unit_columns(6, 12, rng), 0.1, std::nullopt};
    const SparseCode code = infer_code(VectorXd::Zero(6), dict, 0.1);
    CHECK(code.empty());
    CHECK(code.residual_norm == 0.0);
}

TEST_CASE("identity dictionary closed form") {
    Dictionary dict = identity_dict(2);
    VectorXd x(2);
    x << 2.0, 0.3;
    const SparseCode code = infer_code(x, dict, 0.5);
    REQUIRE(code.entries.size() == 1);
    CHECK(code.entries[0].factor == 0);
    CHECK(code.entries[0].value == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(code.value(1) == 0.0);
}

TEST_CASE("matches coordinate descent on random instances") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        Dictionary dict{test::random_unit_columns(8, 16, rng), 0.1, std::nullopt};
        const VectorXd x = random_vector(8, rng);
        const VectorXd oracle = test::nonneg_lasso_cd(dict.phi, x, 0.1);
        const double want = test::naive_objective(dict.phi, x, oracle, 0.1);
        const FistaResult r = SparseCoder(dict).solve(x, 0.1);
        CHECK((r.alpha.array() >= 0.0).all());
        CHECK(r.objective <= 0.5 * x.squaredNorm());
        CHECK(std::abs(r.objective - want) <= 1e-6 * (1.0 + want));
    }
}

TEST_CASE("scaling x and lambda together scales the code") {
    std::mt19937_64 rng(8);
    Dictionary dict{test::random_unit_columns(6, 12, rng), 0.1, std::nullopt};
    const VectorXd x = random_vector(6, rng);
    SparseCoder coder(dict, {5000, 1e-12});
    const VectorXd a = coder.solve(x, 0.1).alpha;
    const VectorXd b = coder.solve(3.0 * x, 0.3).alpha;
    CHECK((b - 3.0 * a).norm() <= 1e-6 * (1.0 + b.norm()));
    CHECK((a - test::nonneg_lasso_cd(dict.phi, x, 0.1)).norm() <= 1e-5);
}

TEST_CASE("invalid input is rejected") {
    Dictionary dict = identity_dict(3);
    SparseCoder coder(dict);
    VectorXd bad = VectorXd::Zero(3);
    bad(1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(coder.solve(bad, 0.1), NumericalError);
    CHECK_THROWS(coder.solve(VectorXd::Zero(4), 0.1));
    CHECK_THROWS(coder.solve(VectorXd::Zero(3), 0.0));
}

TEST_CASE("dropped coefficients leave the residual consistent") {
    std::mt19937_64 rng(4);
    Dictionary dict{test::random_unit_columns(8, 16, rng), 0.1, std::nullopt};
    const VectorXd x = random_vector(8, rng);
    const SparseCode code = SparseCoder(dict).infer(x, 0.1, 0.05);
    for (std::size_t i = 0; i < code.entries.size(); ++i) {
        CHECK(code.entries[i].value > 0.05);
        if (i > 0) {
            CHECK(code.entries[i - 1].factor < code.entries[i].factor);
        }
    }
    CHECK(code.residual_norm == doctest::Approx((x - dict.phi * code.dense(16)).norm()));
}

TEST_CASE("dictionary validation") {
    Dictionary dict = identity_dict(3);
    CHECK_NOTHROW(dict.validate());
    CHECK_THROWS_AS(dict.validate(true), FormatError);
    dict.phi(0, 0) = 1.5;
    CHECK_THROWS_AS(dict.validate(), FormatError);
    project_columns_to_unit_ball(dict.phi);
    CHECK(dict.max_column_norm() <= 1.0 + kColumnNormSlack);
    CHECK(dict.phi(1, 1) == 1.0);
    dict.phi(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(dict.validate(), FormatError);
}

TEST_CASE("encode_store") {
    test::TempDir dir;
    std::mt19937_64 rng(17);
    Dictionary dict{test::random_unit_columns(5, 10, rng), 0.1, std::nullopt};

    SUBCASE("zero vectors give empty codes") {
        std::vector<OccurrenceRecord> rs;
        for (std::uint64_t o = 0; o < 4; ++o) {
            rs.push_back({{o, 0, static_cast<std::uint32_t>(o), "t"}, std::vector<float>(10, 0.0f)});
        }
        write_store(dir.path(), rs, {{0, {"t", "t", "t", "t"}}}, 5, 2);
        const CodeStore codes = encode_store(EmbeddingStore::open(dir.path()), dict, {});
        CHECK(codes.num_rows() == 8);
        CHECK(codes.num_triplets() == 0);
    }

    SUBCASE("rows match independent inference for any thread count") {
        const auto corpus = test::random_corpus(50, 5, 2, 3);
        write_store(dir.path(), corpus.records, corpus.sequences, 5, 2);
        const auto store = EmbeddingStore::open(dir.path());
        EncodeOptions opts;
        opts.lambda = 0.1;
        opts.threads = 1;
        const auto serial = encode_rows(store, dict, opts);
        opts.threads = 4;
        const auto parallel = encode_rows(store, dict, opts);
        REQUIRE(serial.size() == 100);
        for (std::uint64_t row = 0; row < 100; ++row) {
            auto v = store.row(row);
            VectorXd x(5);
            for (int i = 0; i < 5; ++i) {
                x(i) = v[i];
            }
            const SparseCode ref = SparseCoder(dict).infer(x, 0.1, kDefaultDropThreshold);
            CHECK(serial[row].entries == ref.entries);
            CHECK(parallel[row].entries == ref.entries);
        }
        const CodeStore cs = encode_store(store, dict, opts);
        CHECK(cs.info().dict_hash == dict.content_hash());
        CHECK(cs.info().store_hash == store.content_hash());
        CHECK(cs.num_layers() == 2);
    }

    SUBCASE("dimension mismatch") {
        const auto corpus = test::random_corpus(3, 4, 1, 3);
        write_store(dir.path(), corpus.records, corpus.sequences, 4, 1);
        CHECK_THROWS_AS(encode_store(EmbeddingStore::open(dir.path()), dict, {}), FormatError);
    }
}

TEST_CASE("parallel_for propagates exceptions") {
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) {
                                         throw NumericalError("boom");
                                     }
                                 }),
                    NumericalError);
    std::vector<int> hit(100, 0);
    parallel_for(100, 4, [&](std::size_t i) { hit[i] += 1; });
    CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
}
