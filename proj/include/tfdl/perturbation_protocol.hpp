#pragma once

// File-based batch protocol with an external embedding provider.
//
// Request: newline-delimited JSON, one {"id":..,"tokens":[..],"position":i} per line.
// Response: a directory holding an "EMBS" store with num_layers = 1 whose
// occurrence o is the embedding of request line o at its queried position,
// plus ids.txt echoing the request ids in the order they were processed.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tfdl/lime_saliency.hpp"

namespace tfdl {

inline constexpr const char* kResponseIdFile = "ids.txt";

struct PerturbationRequest {
    std::string id;
    std::vector<std::string> tokens;
    std::size_t position = 0;
};

struct RequestParseResult {
    std::vector<PerturbationRequest> requests;
    /// "line N: reason" for each malformed line; parsing continues past them.
    std::vector<std::string> errors;
};

std::vector<PerturbationRequest> make_requests(const PerturbationSet& set, const std::string& query_id);

void write_requests(const std::filesystem::path& path, const std::vector<PerturbationRequest>& requests);
RequestParseResult read_requests(const std::filesystem::path& path);

/// Validates the id echo file and returns one embedding per request, in request order (n x d).
Eigen::MatrixXd read_response(const std::filesystem::path& dir, const std::vector<PerturbationRequest>& requests);

void write_id_echo(const std::filesystem::path& dir, const std::vector<std::string>& ids);

}  // namespace tfdl
