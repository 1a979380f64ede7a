#pragma once

// Persisted sparse codes for every (occurrence, layer) row of a store.
//
// File layout (little-endian):
//   magic           "TFCS"
//   version         u32
//   num_rows        u64
//   m               u32
//   dict_hash       u64   Dictionary::content_hash of the coding dictionary
//   store_hash      u64   EmbeddingStore::content_hash of the source store
//   num_layers      u32
//   drop_threshold  f64
//   lambda          f64
//   num_triplets    u64
//   triplets        (row u64, factor u32, value f32), sorted by (row, factor)

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tfdl/sparse_coder.hpp"

namespace tfdl {

inline constexpr char kCodeStoreMagic[5] = "TFCS";
inline constexpr std::uint32_t kCodeStoreVersion = 1;

struct CodeStoreInfo {
    std::uint64_t num_rows = 0;
    std::uint32_t m = 0;
    std::uint64_t dict_hash = 0;
    std::uint64_t store_hash = 0;
    std::uint32_t num_layers = 1;
    double drop_threshold = kDefaultDropThreshold;
    double lambda = kDefaultLambda;

    bool operator==(const CodeStoreInfo&) const = default;
};

class CodeStore {
public:
    CodeStore() = default;

    /// Stores codes row by row; coefficients <= drop_threshold are dropped.
    static CodeStore from_codes(const CodeStoreInfo& info, std::span<const SparseCode> codes);
    static CodeStore read(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;

    /// Appends rows (used to extend a store that grew).
    void append(std::span<const SparseCode> codes);
    /// Rebinds the store reference after the source store grew.
    void set_store_hash(std::uint64_t hash) noexcept { info_.store_hash = hash; }

    const CodeStoreInfo& info() const noexcept { return info_; }
    std::uint64_t num_rows() const noexcept { return info_.num_rows; }
    std::uint32_t m() const noexcept { return info_.m; }
    std::uint32_t num_layers() const noexcept { return info_.num_layers; }
    std::uint64_t num_triplets() const noexcept { return factors_.size(); }

    std::span<const std::uint32_t> row_factors(std::uint64_t row) const;
    std::span<const float> row_values(std::uint64_t row) const;
    /// Coefficient of factor c in row, 0 if absent.
    float value(std::uint64_t row, std::uint32_t factor) const;

    bool operator==(const CodeStore&) const = default;

private:
    void check_row(std::uint64_t row) const;

    CodeStoreInfo info_;
    std::vector<std::uint64_t> offsets_{0};
    std::vector<std::uint32_t> factors_;
    std::vector<float> values_;
};

}  // namespace tfdl
