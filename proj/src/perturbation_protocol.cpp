#include "tfdl/perturbation_protocol.hpp"

#include <fstream>

#include "json.hpp"
#include "tfdl/embedding_store.hpp"
#include "tfdl/error.hpp"

namespace tfdl {

using nlohmann::json;

std::vector<PerturbationRequest> make_requests(const PerturbationSet& set, const std::string& query_id) {
    std::vector<PerturbationRequest> out;
    out.reserve(set.samples.size());
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
        out.push_back({query_id + "-" + std::to_string(i), set.samples[i].tokens, set.position});
    }
    return out;
}

void write_requests(const std::filesystem::path& path, const std::vector<PerturbationRequest>& requests) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    for (const auto& r : requests) {
        out << json{{"id", r.id}, {"tokens", r.tokens}, {"position", r.position}}.dump() << '\n';
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

RequestParseResult read_requests(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    RequestParseResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            const json j = json::parse(line);
            PerturbationRequest r;
            r.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            r.tokens = j.at("tokens").get<std::vector<std::string>>();
            r.position = j.at("position").get<std::size_t>();
            if (r.position >= r.tokens.size()) {
                throw FormatError("position outside token list");
            }
            result.requests.push_back(std::move(r));
        } catch (const std::exception& e) {
            result.errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return result;
}

void write_id_echo(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
    std::ofstream out(dir / kResponseIdFile, std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + (dir / kResponseIdFile).string());
    }
    for (const auto& id : ids) {
        out << id << '\n';
    }
}

Eigen::MatrixXd read_response(const std::filesystem::path& dir, const std::vector<PerturbationRequest>& requests) {
    std::ifstream ids_in(dir / kResponseIdFile);
    if (!ids_in) {
        throw FormatError("response " + dir.string() + " has no id echo file");
    }
    std::vector<std::string> ids;
    for (std::string line; std::getline(ids_in, line);) {
        if (!line.empty()) {
            ids.push_back(line);
        }
    }
    if (ids.size() != requests.size()) {
        throw FormatError("response echoes " + std::to_string(ids.size()) + " ids for " +
                          std::to_string(requests.size()) + " requests");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] != requests[i].id) {
            throw FormatError("response order mismatch at row " + std::to_string(i) + ": expected id " +
                              requests[i].id + ", got " + ids[i]);
        }
    }
    const EmbeddingStore store = EmbeddingStore::open(dir);
    if (store.num_layers() != 1) {
        throw FormatError("response store must hold exactly one layer slot");
    }
    if (store.num_occurrences() != requests.size()) {
        throw FormatError("response store holds " + std::to_string(store.num_occurrences()) + " rows for " +
                          std::to_string(requests.size()) + " requests");
    }
    Eigen::MatrixXd out(static_cast<Eigen::Index>(requests.size()), store.d());
    for (std::uint64_t o = 0; o < store.num_occurrences(); ++o) {
        // Ids are positional; the echoed tokens catch a response built for another request set.
        const OccurrenceMeta& meta = store.occurrence(o);
        if (meta.position != requests[o].position || store.sequence(meta.seq_id) != requests[o].tokens) {
            throw FormatError("response row " + std::to_string(o) + " does not echo the tokens of request " +
                              requests[o].id);
        }
        const auto v = store.vector(o, 0);
        for (std::uint32_t k = 0; k < store.d(); ++k) {
            out(static_cast<Eigen::Index>(o), k) = v[k];
        }
    }
    return out;
}

}  // namespace tfdl
