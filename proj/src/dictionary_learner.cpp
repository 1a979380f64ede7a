#include "tfdl/dictionary_learner.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "tfdl/binary_io.hpp"
#include "tfdl/error.hpp"

namespace tfdl {

void TrainConfig::validate() const {
    if (m == 0) {
        throw UsageError("m must be at least 1");
    }
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw UsageError("lambda must be positive");
    }
    if (batch_size == 0) {
        throw UsageError("batch_size must be at least 1");
    }
    if (!(delta > 0.0)) {
        throw UsageError("delta must be positive");
    }
    if (checkpoint_every > 0 && checkpoint_path.empty()) {
        throw UsageError("checkpoint_every set without a checkpoint path");
    }
}

bool LearnerState::operator==(const LearnerState& other) const {
    return dict.phi.rows() == other.dict.phi.rows() && dict.phi.cols() == other.dict.phi.cols() &&
           dict.phi == other.dict.phi && dict.lambda == other.dict.lambda && h_accum.size() == other.h_accum.size() &&
           h_accum == other.h_accum && step == other.step && last_reset == other.last_reset;
}

namespace {

Eigen::VectorXd random_unit_vector(std::uint32_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(d);
    double n = 0.0;
    while (n == 0.0) {
        for (std::uint32_t i = 0; i < d; ++i) {
            v(i) = normal(rng);
        }
        n = v.norm();
    }
    return v / n;
}

}  // namespace

Dictionary init_dictionary(std::uint32_t d, std::uint32_t m, std::uint64_t seed) {
    if (d == 0 || m == 0) {
        throw UsageError("init_dictionary requires d >= 1 and m >= 1");
    }
    std::mt19937_64 rng(seed);
    Dictionary dict;
    dict.phi.resize(d, m);
    for (std::uint32_t c = 0; c < m; ++c) {
        dict.phi.col(c) = random_unit_vector(d, rng);
    }
    return dict;
}

LearnerState init_state(std::uint32_t d, std::uint32_t m, std::uint64_t seed, double lambda) {
    LearnerState state;
    state.dict = init_dictionary(d, m, seed);
    state.dict.lambda = lambda;
    state.h_accum = Eigen::VectorXd::Zero(m);
    state.last_reset.assign(m, 0);
    return state;
}

UpdateDirection update_direction(const LearnerState& state, const Batch& batch, const Eigen::MatrixXd& codes,
                                 double delta) {
    const auto& phi = state.dict.phi;
    const Eigen::Index n = batch.matrix.rows();
    if (batch.matrix.cols() != phi.rows() || codes.rows() != phi.cols() || codes.cols() != n ||
        batch.weights.size() != n || state.h_accum.size() != phi.cols()) {
        throw FormatError("update_step: shape mismatch");
    }
    const Eigen::MatrixXd xw = batch.matrix.transpose() * batch.weights.asDiagonal();
    const Eigen::MatrixXd aw = codes * batch.weights.asDiagonal();
    const Eigen::MatrixXd residual = xw - phi * aw;

    UpdateDirection out;
    out.h_accum = state.h_accum + aw.rowwise().squaredNorm();
    out.delta_phi = residual * aw.transpose();
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        out.delta_phi.col(j) /= out.h_accum(j) + delta;
    }
    return out;
}

void update_step(LearnerState& state, const Batch& batch, const Eigen::MatrixXd& codes, double delta) {
    UpdateDirection dir = update_direction(state, batch, codes, delta);
    Eigen::MatrixXd next = state.dict.phi + dir.delta_phi;
    if (!next.allFinite() || !dir.h_accum.allFinite()) {
        throw NumericalError("non-finite dictionary update at step " + std::to_string(state.step));
    }
    project_columns_to_unit_ball(next);
    state.dict.phi = std::move(next);
    state.dict.lipschitz_cache.reset();
    state.h_accum = std::move(dir.h_accum);
    ++state.step;
}

void update_step(LearnerState& state, const Batch& batch, std::span<const SparseCode> codes, double delta) {
    Eigen::MatrixXd dense(state.dict.m(), static_cast<Eigen::Index>(codes.size()));
    for (std::size_t i = 0; i < codes.size(); ++i) {
        dense.col(static_cast<Eigen::Index>(i)) = codes[i].dense(state.dict.m());
    }
    update_step(state, batch, dense, delta);
}

double weighted_update_objective(const Eigen::MatrixXd& phi, const Batch& batch, const Eigen::MatrixXd& codes) {
    const Eigen::MatrixXd xw = batch.matrix.transpose() * batch.weights.asDiagonal();
    const Eigen::MatrixXd aw = codes * batch.weights.asDiagonal();
    return 0.5 * (xw - phi * aw).squaredNorm();
}

TrainResult train(const EmbeddingStore& store, const TrainConfig& config, std::optional<LearnerState> resume,
                  const StepObserver& observer) {
    config.validate();
    if (store.empty()) {
        throw FormatError("cannot train on an empty store");
    }
    const FrequencyTable freq = build_frequency_table(store);

    TrainResult result;
    if (resume) {
        result.state = std::move(*resume);
        if (result.state.dict.d() != static_cast<Eigen::Index>(store.d()) ||
            result.state.dict.m() != static_cast<Eigen::Index>(config.m)) {
            throw FormatError("resumed state shape does not match store/config");
        }
        if (result.state.last_reset.size() != config.m) {
            result.state.last_reset.assign(config.m, 0);
        }
    } else {
        result.state = init_state(store.d(), config.m, config.seed, config.lambda);
    }
    LearnerState& state = result.state;
    state.dict.lambda = config.lambda;

    const Eigen::Index m = config.m;
    while (state.step < config.total_steps) {
        const std::uint64_t step = state.step;
        const Batch batch = sample_minibatch(store, freq, config.batch_size, io::derive_seed(config.seed, step));

        const SparseCoder coder(state.dict, FistaOptions{config.fista_max_iter, config.fista_tol});
        Eigen::MatrixXd codes(m, static_cast<Eigen::Index>(config.batch_size));
        std::vector<double> objectives(config.batch_size);
        parallel_for(config.batch_size, config.threads, [&](std::size_t i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const FistaResult r = coder.solve(batch.matrix.row(ii).transpose(), config.lambda);
            codes.col(ii) = r.alpha;
            objectives[i] = r.objective;
        });
        double mean_objective = 0.0;
        for (double o : objectives) {
            mean_objective += o;
        }
        mean_objective /= static_cast<double>(objectives.size());
        result.objective_trace.push_back(mean_objective);

        update_step(state, batch, codes, config.delta);

        if (config.dead_factor_steps > 0) {
            for (Eigen::Index j = 0; j < m; ++j) {
                auto& reset = state.last_reset[static_cast<std::size_t>(j)];
                if (state.h_accum(j) == 0.0 && state.step - reset >= config.dead_factor_steps) {
                    std::mt19937_64 rng(io::derive_seed(config.seed ^ 0xdeadfacull,
                                                        state.step * static_cast<std::uint64_t>(m) + j));
                    state.dict.phi.col(j) = random_unit_vector(store.d(), rng);
                    reset = state.step;
                    ++result.reinitialized_factors;
                }
            }
        }

        const double max_norm = state.dict.max_column_norm();
        if (!(max_norm <= 1.0 + kColumnNormSlack) || !state.dict.phi.allFinite()) {
            throw NumericalError("column-norm invariant violated at step " + std::to_string(state.step));
        }
        if (observer) {
            observer(state, mean_objective);
        }
        if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
            write_checkpoint(config.checkpoint_path, state);
        }
    }
    return result;
}

void write_dictionary(const std::filesystem::path& path, const LearnerState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    const auto& phi = state.dict.phi;
    io::write_magic(out, kDictionaryMagic);
    io::write_le<std::uint32_t>(out, kDictionaryVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(phi.rows()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(phi.cols()));
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
        // Rounding to float can push a unit column just past norm 1; shrink it
        // back so the stored dictionary satisfies the invariant by itself.
        Eigen::VectorXf col = phi.col(c).cast<float>();
        while (col.cast<double>().norm() > 1.0) {
            col *= 1.0f - 0x1.0p-23f;
        }
        for (Eigen::Index r = 0; r < phi.rows(); ++r) {
            io::write_le<float>(out, col(r));
        }
    }
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        io::write_le<float>(out, static_cast<float>(state.h_accum(j)));
    }
    io::write_le<std::uint64_t>(out, state.step);
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

LearnerState read_dictionary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    io::expect_magic(in, kDictionaryMagic, path.string());
    const auto version = io::read_le<std::uint32_t>(in, "dictionary version");
    if (version != kDictionaryVersion) {
        throw FormatError("unsupported dictionary version " + std::to_string(version));
    }
    const auto d = io::read_le<std::uint32_t>(in, "d");
    const auto m = io::read_le<std::uint32_t>(in, "m");
    if (d == 0 || m == 0) {
        throw FormatError(path.string() + ": zero-dimension dictionary");
    }
    LearnerState state;
    state.dict.phi.resize(d, m);
    for (std::uint32_t c = 0; c < m; ++c) {
        for (std::uint32_t r = 0; r < d; ++r) {
            state.dict.phi(r, c) = io::read_le<float>(in, "phi");
        }
    }
    state.h_accum.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) {
        state.h_accum(j) = io::read_le<float>(in, "h_accum");
    }
    state.step = io::read_le<std::uint64_t>(in, "step");
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after dictionary");
    }
    state.last_reset.assign(m, 0);
    return state;
}

void write_checkpoint(const std::filesystem::path& path, const LearnerState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write checkpoint " + path.string());
    }
    const auto& phi = state.dict.phi;
    io::write_magic(out, kCheckpointMagic);
    io::write_le<std::uint32_t>(out, kDictionaryVersion);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(phi.rows()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(phi.cols()));
    io::write_le<double>(out, state.dict.lambda);
    io::write_le<std::uint64_t>(out, state.step);
    for (Eigen::Index c = 0; c < phi.cols(); ++c) {
        for (Eigen::Index r = 0; r < phi.rows(); ++r) {
            io::write_le<double>(out, phi(r, c));
        }
    }
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        io::write_le<double>(out, state.h_accum(j));
    }
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
        const auto idx = static_cast<std::size_t>(j);
        io::write_le<std::uint64_t>(out, idx < state.last_reset.size() ? state.last_reset[idx] : 0);
    }
    if (!out) {
        throw FormatError("checkpoint write failed on " + path.string());
    }
}

LearnerState read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    io::expect_magic(in, kCheckpointMagic, path.string());
    const auto version = io::read_le<std::uint32_t>(in, "checkpoint version");
    if (version != kDictionaryVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto d = io::read_le<std::uint32_t>(in, "d");
    const auto m = io::read_le<std::uint32_t>(in, "m");
    if (d == 0 || m == 0) {
        throw FormatError(path.string() + ": zero-dimension checkpoint");
    }
    LearnerState state;
    state.dict.lambda = io::read_le<double>(in, "lambda");
    state.step = io::read_le<std::uint64_t>(in, "step");
    state.dict.phi.resize(d, m);
    for (std::uint32_t c = 0; c < m; ++c) {
        for (std::uint32_t r = 0; r < d; ++r) {
            state.dict.phi(r, c) = io::read_le<double>(in, "phi");
        }
    }
    state.h_accum.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) {
        state.h_accum(j) = io::read_le<double>(in, "h_accum");
    }
    state.last_reset.resize(m);
    for (auto& r : state.last_reset) {
        r = io::read_le<std::uint64_t>(in, "last_reset");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after checkpoint");
    }
    return state;
}

}  // namespace tfdl
