// Stand-in embedding provider for protocol tests.
//
//   fake_extractor <request.jsonl> <response_dir> [d]
//
// The "embedding" of a sequence at its queried position is the mean over
// unmasked tokens of a fixed per-token random vector, so masking a token
// moves the output linearly and deterministically.

#include <iostream>
#include <random>
#include <string>

#include "tfdl/binary_io.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/lime_saliency.hpp"
#include "tfdl/perturbation_protocol.hpp"

namespace {

std::vector<float> token_vector(const std::string& token, std::uint32_t d) {
    tfdl::io::Fnv1a64 h;
    h.update(token.data(), token.size());
    std::mt19937_64 rng(h.digest());
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> v(d);
    for (auto& x : v) {
        x = normal(rng);
    }
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::cerr << "usage: fake_extractor <request> <response_dir> [d]\n";
        return 1;
    }
    const std::uint32_t d = argc > 3 ? static_cast<std::uint32_t>(std::stoul(argv[3])) : 8;
    try {
        const auto parsed = tfdl::read_requests(argv[1]);
        for (const auto& e : parsed.errors) {
            std::cerr << "fake_extractor: " << e << '\n';
        }
        std::vector<tfdl::OccurrenceRecord> records;
        tfdl::SequenceTable sequences;
        std::vector<std::string> ids;
        for (const auto& req : parsed.requests) {
            const std::uint64_t o = records.size();
            std::vector<float> out(d, 0.0f);
            std::size_t kept = 0;
            for (const auto& tok : req.tokens) {
                if (tok == tfdl::kUnknownToken) {
                    continue;
                }
                const auto v = token_vector(tok, d);
                for (std::uint32_t i = 0; i < d; ++i) {
                    out[i] += v[i];
                }
                ++kept;
            }
            for (auto& x : out) {
                x = kept > 0 ? x / static_cast<float>(req.tokens.size()) : 0.0f;
            }
            sequences[o] = req.tokens;
            records.push_back({{o, o, static_cast<std::uint32_t>(req.position), req.tokens[req.position]}, out});
            ids.push_back(req.id);
        }
        tfdl::write_store(argv[2], records, sequences, d, 1, {{"provider", "fake_extractor"}});
        tfdl::write_id_echo(argv[2], ids);
    } catch (const std::exception& e) {
        std::cerr << "fake_extractor: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
