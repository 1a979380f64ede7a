#include "tfdl/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "json.hpp"

namespace tfdl {

static_assert(std::endian::native == std::endian::little,
              "vector rows are mapped in place and require a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_header(std::ostream& out, const StoreHeader& h) {
    io::write_magic(out, kStoreMagic);
    io::write_le<std::uint32_t>(out, h.version);
    io::write_le<std::uint32_t>(out, h.d);
    io::write_le<std::uint32_t>(out, h.num_layers);
    io::write_le<std::uint64_t>(out, h.num_occurrences);
}

StoreHeader read_header(std::istream& in, const std::string& file) {
    io::expect_magic(in, kStoreMagic, file);
    StoreHeader h;
    h.version = io::read_le<std::uint32_t>(in, "store version");
    if (h.version != kStoreVersion) {
        throw FormatError("unsupported store version " + std::to_string(h.version) + " in " + file);
    }
    h.d = io::read_le<std::uint32_t>(in, "store d");
    h.num_layers = io::read_le<std::uint32_t>(in, "store num_layers");
    h.num_occurrences = io::read_le<std::uint64_t>(in, "store num_occurrences");
    if (h.d == 0 || h.num_layers == 0) {
        throw FormatError("store header in " + file + " has zero d or num_layers");
    }
    return h;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::binary) {
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    return out;
}

}  // namespace

StoreWriter::StoreWriter(fs::path dir, std::uint32_t d, std::uint32_t num_layers, StoreAttributes attributes)
    : dir_(std::move(dir)), attributes_(std::move(attributes)) {
    if (d == 0 || num_layers == 0) {
        throw FormatError("store requires d >= 1 and num_layers >= 1");
    }
    header_.d = d;
    header_.num_layers = num_layers;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
        throw FormatError("cannot create store directory " + dir_.string() + ": " + ec.message());
    }
    vectors_ = open_out(dir_ / kStoreVectorsFile);
}

StoreWriter::~StoreWriter() = default;

void StoreWriter::add(const OccurrenceRecord& record) {
    if (finished_) {
        throw FormatError("store writer already finished");
    }
    if (record.meta.occ_index != header_.num_occurrences) {
        throw FormatError("occ_index gap: expected " + std::to_string(header_.num_occurrences) + ", got " +
                          std::to_string(record.meta.occ_index));
    }
    const std::size_t expected = std::size_t{header_.d} * header_.num_layers;
    if (record.vectors.size() != expected) {
        throw FormatError("dimension mismatch at occurrence " + std::to_string(record.meta.occ_index) +
                          ": expected " + std::to_string(expected) + " floats, got " +
                          std::to_string(record.vectors.size()));
    }
    for (float v : record.vectors) {
        if (!std::isfinite(v)) {
            throw FormatError("non-finite vector entry at occurrence " + std::to_string(record.meta.occ_index));
        }
    }
    for (float v : record.vectors) {
        io::write_le<float>(vectors_, v);
    }
    if (!vectors_) {
        throw FormatError("write failed on " + (dir_ / kStoreVectorsFile).string());
    }
    metas_.push_back(record.meta);
    ++header_.num_occurrences;
}

StoreHeader StoreWriter::finish(const SequenceTable& sequences) {
    if (finished_) {
        throw FormatError("store writer already finished");
    }
    for (const auto& m : metas_) {
        auto it = sequences.find(m.seq_id);
        if (it == sequences.end()) {
            throw FormatError("occurrence " + std::to_string(m.occ_index) + " references unknown sequence " +
                              std::to_string(m.seq_id));
        }
        if (m.position >= it->second.size()) {
            throw FormatError("occurrence " + std::to_string(m.occ_index) + " position out of range");
        }
        if (it->second[m.position] != m.token) {
            throw FormatError("occurrence " + std::to_string(m.occ_index) + " token does not match its sequence");
        }
    }
    vectors_.close();
    if (!vectors_) {
        throw FormatError("write failed on " + (dir_ / kStoreVectorsFile).string());
    }

    auto meta = open_out(dir_ / kStoreMetaFile);
    write_header(meta, header_);
    json attrs = json::object();
    for (const auto& [k, v] : attributes_) {
        attrs[k] = v;
    }
    meta << attrs.dump() << '\n';
    for (const auto& m : metas_) {
        json line = {{"occ", m.occ_index}, {"seq", m.seq_id}, {"pos", m.position}, {"token", m.token}};
        meta << line.dump() << '\n';
    }
    if (!meta) {
        throw FormatError("write failed on " + (dir_ / kStoreMetaFile).string());
    }

    auto seqs = open_out(dir_ / kStoreSequencesFile);
    for (const auto& [id, tokens] : sequences) {
        json line = {{"seq", id}, {"tokens", tokens}};
        seqs << line.dump() << '\n';
    }
    if (!seqs) {
        throw FormatError("write failed on " + (dir_ / kStoreSequencesFile).string());
    }
    finished_ = true;
    return header_;
}

StoreHeader write_store(const fs::path& dir, std::span<const OccurrenceRecord> records,
                        const SequenceTable& sequences, std::uint32_t d, std::uint32_t num_layers,
                        const StoreAttributes& attributes) {
    StoreWriter writer(dir, d, num_layers, attributes);
    for (const auto& r : records) {
        writer.add(r);
    }
    return writer.finish(sequences);
}

StoreHeader read_store_header(const fs::path& dir) {
    const fs::path meta_path = dir / kStoreMetaFile;
    std::ifstream in(meta_path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + meta_path.string());
    }
    return read_header(in, meta_path.string());
}

EmbeddingStore EmbeddingStore::open(const fs::path& dir) {
    EmbeddingStore store;
    store.dir_ = dir;
    const fs::path meta_path = dir / kStoreMetaFile;
    std::ifstream meta(meta_path, std::ios::binary);
    if (!meta) {
        throw FormatError("cannot open " + meta_path.string());
    }
    store.header_ = read_header(meta, meta_path.string());

    std::string line;
    std::uint64_t line_no = 1;
    auto parse = [&](const std::string& text, const fs::path& file) {
        try {
            return json::parse(text);
        } catch (const json::exception& e) {
            throw FormatError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    };
    if (!std::getline(meta, line)) {
        throw FormatError("missing attribute line in " + meta_path.string());
    }
    const json attrs = parse(line, meta_path);
    for (const auto& [k, v] : attrs.items()) {
        store.attributes_[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    store.metas_.reserve(store.header_.num_occurrences);
    while (std::getline(meta, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j = parse(line, meta_path);
        try {
            OccurrenceMeta m;
            m.occ_index = j.at("occ").get<std::uint64_t>();
            m.seq_id = j.at("seq").get<std::uint64_t>();
            m.position = j.at("pos").get<std::uint32_t>();
            m.token = j.at("token").get<std::string>();
            if (m.occ_index != store.metas_.size()) {
                throw FormatError(meta_path.string() + ": occurrence records out of order at line " +
                                  std::to_string(line_no));
            }
            store.metas_.push_back(std::move(m));
        } catch (const json::exception& e) {
            throw FormatError(meta_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (store.metas_.size() != store.header_.num_occurrences) {
        throw FormatError("length mismatch: header declares " + std::to_string(store.header_.num_occurrences) +
                          " occurrences, metadata holds " + std::to_string(store.metas_.size()));
    }

    const fs::path seq_path = dir / kStoreSequencesFile;
    std::ifstream seqs(seq_path);
    if (!seqs) {
        throw FormatError("cannot open " + seq_path.string());
    }
    line_no = 0;
    while (std::getline(seqs, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j = parse(line, seq_path);
        try {
            store.sequences_[j.at("seq").get<std::uint64_t>()] = j.at("tokens").get<std::vector<std::string>>();
        } catch (const json::exception& e) {
            throw FormatError(seq_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    for (const auto& m : store.metas_) {
        auto it = store.sequences_.find(m.seq_id);
        if (it == store.sequences_.end() || m.position >= it->second.size() || it->second[m.position] != m.token) {
            throw FormatError("occurrence " + std::to_string(m.occ_index) + " inconsistent with sequence table");
        }
    }

    const fs::path vec_path = dir / kStoreVectorsFile;
    store.vectors_ = std::make_shared<io::MappedFile>(vec_path);
    if (store.vectors_->size() != store.header_.vectors_bytes()) {
        throw FormatError("length mismatch: " + vec_path.string() + " holds " +
                          std::to_string(store.vectors_->size()) + " bytes, header implies " +
                          std::to_string(store.header_.vectors_bytes()));
    }

    io::Fnv1a64 h;
    for (const char* name : {kStoreMetaFile, kStoreSequencesFile}) {
        h.update_value(io::hash_file(dir / name));
    }
    h.update(store.vectors_->bytes());
    store.content_hash_ = h.digest();
    return store;
}

const OccurrenceMeta& EmbeddingStore::occurrence(std::uint64_t occ_index) const {
    if (occ_index >= metas_.size()) {
        throw FormatError("occurrence index " + std::to_string(occ_index) + " out of range");
    }
    return metas_[occ_index];
}

const std::vector<std::string>& EmbeddingStore::sequence(std::uint64_t seq_id) const {
    auto it = sequences_.find(seq_id);
    if (it == sequences_.end()) {
        throw FormatError("unknown sequence " + std::to_string(seq_id));
    }
    return it->second;
}

std::uint64_t EmbeddingStore::row_index(std::uint64_t occ_index, std::uint32_t layer) const {
    if (occ_index >= header_.num_occurrences || layer >= header_.num_layers) {
        throw FormatError("(occurrence " + std::to_string(occ_index) + ", layer " + std::to_string(layer) +
                          ") out of range");
    }
    return occ_index * header_.num_layers + layer;
}

RowRef EmbeddingStore::row_ref(std::uint64_t row_index) const {
    return {row_index / header_.num_layers, static_cast<std::uint32_t>(row_index % header_.num_layers)};
}

std::span<const float> EmbeddingStore::row(std::uint64_t row_index) const {
    if (row_index >= num_rows()) {
        throw FormatError("row " + std::to_string(row_index) + " out of range");
    }
    const auto* base = reinterpret_cast<const float*>(vectors_->bytes().data());
    return {base + row_index * header_.d, header_.d};
}

std::span<const float> EmbeddingStore::vector(std::uint64_t occ_index, std::uint32_t layer) const {
    return row(row_index(occ_index, layer));
}

OccurrenceRecord EmbeddingStore::record(std::uint64_t occ_index) const {
    OccurrenceRecord r;
    r.meta = occurrence(occ_index);
    r.vectors.reserve(std::size_t{header_.d} * header_.num_layers);
    for (std::uint32_t l = 0; l < header_.num_layers; ++l) {
        auto v = vector(occ_index, l);
        r.vectors.insert(r.vectors.end(), v.begin(), v.end());
    }
    return r;
}

FrequencyTable build_frequency_table(const EmbeddingStore& store) {
    FrequencyTable table;
    for (const auto& m : store.occurrences()) {
        ++table[m.token];
    }
    return table;
}

Batch gather_rows(const EmbeddingStore& store, const FrequencyTable& freq, std::span<const RowRef> rows) {
    Batch batch;
    batch.rows.assign(rows.begin(), rows.end());
    batch.matrix.resize(static_cast<Eigen::Index>(rows.size()), store.d());
    batch.weights.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto v = store.vector(rows[i].occ_index, rows[i].layer);
        for (std::uint32_t k = 0; k < store.d(); ++k) {
            batch.matrix(static_cast<Eigen::Index>(i), k) = v[k];
        }
        const auto& token = store.occurrence(rows[i].occ_index).token;
        auto it = freq.find(token);
        if (it == freq.end() || it->second == 0) {
            throw FormatError("token \"" + token + "\" missing from frequency table");
        }
        batch.weights(static_cast<Eigen::Index>(i)) = 1.0 / std::sqrt(static_cast<double>(it->second));
    }
    return batch;
}

Batch sample_minibatch(const EmbeddingStore& store, const FrequencyTable& freq, std::size_t size,
                       std::uint64_t seed) {
    if (store.empty()) {
        throw FormatError("cannot sample a minibatch from an empty store");
    }
    if (size == 0) {
        throw UsageError("minibatch size must be at least 1");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint64_t> pick(0, store.num_rows() - 1);
    std::vector<RowRef> rows(size);
    for (auto& r : rows) {
        r = store.row_ref(pick(rng));
    }
    return gather_rows(store, freq, rows);
}

}  // namespace tfdl
