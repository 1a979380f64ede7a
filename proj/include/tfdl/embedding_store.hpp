#pragma once

// On-disk corpus of layer-wise contextualized embeddings.
//
// A store is a directory holding three files:
//
//   meta.embs       24-byte little-endian header, then newline-delimited JSON:
//                     line 1: store attributes object (free-form strings)
//                     line 2..: one occurrence record per line, in occ_index order
//                           {"occ":o,"seq":s,"pos":i,"token":"..."}
//   vectors.f32     raw float32 LE, row (o * num_layers + l) holds x^(l) of occurrence o
//   sequences.jsonl one {"seq":s,"tokens":[...]} per line, ascending seq id
//
// Header layout:
//   magic            4 bytes  "EMBS"
//   version          u32
//   d                u32
//   num_layers       u32      layer slots, slot 0 is the pre-block embedding output
//   num_occurrences  u64

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tfdl/binary_io.hpp"

namespace tfdl {

inline constexpr char kStoreMagic[5] = "EMBS";
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderBytes = 24;

inline constexpr const char* kStoreMetaFile = "meta.embs";
inline constexpr const char* kStoreVectorsFile = "vectors.f32";
inline constexpr const char* kStoreSequencesFile = "sequences.jsonl";

struct StoreHeader {
    std::uint32_t version = kStoreVersion;
    std::uint32_t d = 0;
    std::uint32_t num_layers = 0;
    std::uint64_t num_occurrences = 0;

    std::uint64_t num_rows() const { return num_occurrences * num_layers; }
    std::uint64_t vectors_bytes() const { return num_rows() * d * sizeof(float); }
    bool operator==(const StoreHeader&) const = default;
};

struct OccurrenceMeta {
    std::uint64_t occ_index = 0;
    std::uint64_t seq_id = 0;
    std::uint32_t position = 0;
    std::string token;

    bool operator==(const OccurrenceMeta&) const = default;
};

struct OccurrenceRecord {
    OccurrenceMeta meta;
    /// num_layers * d floats, layer-major.
    std::vector<float> vectors;

    bool operator==(const OccurrenceRecord&) const = default;
};

using SequenceTable = std::map<std::uint64_t, std::vector<std::string>>;
using FrequencyTable = std::map<std::string, std::uint64_t>;
using StoreAttributes = std::map<std::string, std::string>;

/// One (occurrence, layer) pair; its flat row index is occ * num_layers + layer.
struct RowRef {
    std::uint64_t occ_index = 0;
    std::uint32_t layer = 0;

    bool operator==(const RowRef&) const = default;
};

struct Batch {
    std::vector<RowRef> rows;
    Eigen::MatrixXd matrix;   // |rows| x d
    Eigen::VectorXd weights;  // 1 / sqrt(f(token))
};

/// Single-writer streaming store writer. Records must arrive in occ_index order.
class StoreWriter {
public:
    StoreWriter(std::filesystem::path dir, std::uint32_t d, std::uint32_t num_layers,
                StoreAttributes attributes = {});
    ~StoreWriter();

    StoreWriter(const StoreWriter&) = delete;
    StoreWriter& operator=(const StoreWriter&) = delete;

    void add(const OccurrenceRecord& record);
    /// Validates records against the sequence table, writes the header, closes files.
    StoreHeader finish(const SequenceTable& sequences);

private:
    std::filesystem::path dir_;
    StoreHeader header_;
    StoreAttributes attributes_;
    std::ofstream vectors_;
    std::vector<OccurrenceMeta> metas_;
    bool finished_ = false;
};

StoreHeader write_store(const std::filesystem::path& dir, std::span<const OccurrenceRecord> records,
                        const SequenceTable& sequences, std::uint32_t d, std::uint32_t num_layers,
                        const StoreAttributes& attributes = {});

/// Read-only handle. Vectors are memory mapped, metadata is fully loaded.
/// Safe to share between concurrent readers.
class EmbeddingStore {
public:
    static EmbeddingStore open(const std::filesystem::path& dir);

    const StoreHeader& header() const noexcept { return header_; }
    std::uint32_t d() const noexcept { return header_.d; }
    std::uint32_t num_layers() const noexcept { return header_.num_layers; }
    std::uint64_t num_occurrences() const noexcept { return header_.num_occurrences; }
    std::uint64_t num_rows() const noexcept { return header_.num_rows(); }
    bool empty() const noexcept { return header_.num_occurrences == 0; }

    const StoreAttributes& attributes() const noexcept { return attributes_; }
    const std::vector<OccurrenceMeta>& occurrences() const noexcept { return metas_; }
    const OccurrenceMeta& occurrence(std::uint64_t occ_index) const;
    const SequenceTable& sequences() const noexcept { return sequences_; }
    const std::vector<std::string>& sequence(std::uint64_t seq_id) const;

    std::span<const float> vector(std::uint64_t occ_index, std::uint32_t layer) const;
    std::span<const float> row(std::uint64_t row_index) const;
    std::uint64_t row_index(std::uint64_t occ_index, std::uint32_t layer) const;
    RowRef row_ref(std::uint64_t row_index) const;

    OccurrenceRecord record(std::uint64_t occ_index) const;

    /// FNV-1a over all three files; identifies the store in derived artifacts.
    std::uint64_t content_hash() const { return content_hash_; }
    const std::filesystem::path& path() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    StoreHeader header_;
    StoreAttributes attributes_;
    std::vector<OccurrenceMeta> metas_;
    SequenceTable sequences_;
    std::shared_ptr<io::MappedFile> vectors_;
    std::uint64_t content_hash_ = 0;
};

StoreHeader read_store_header(const std::filesystem::path& dir);

FrequencyTable build_frequency_table(const EmbeddingStore& store);

/// Uniform with replacement over all (occurrence, layer) pairs; weight = 1/sqrt(f(token)).
Batch sample_minibatch(const EmbeddingStore& store, const FrequencyTable& freq, std::size_t size,
                       std::uint64_t seed);

/// Builds a batch for explicit rows (weights from the frequency table).
Batch gather_rows(const EmbeddingStore& store, const FrequencyTable& freq, std::span<const RowRef> rows);

}  // namespace tfdl
