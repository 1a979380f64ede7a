#include "tfdl/code_store.hpp"

#include <algorithm>
#include <fstream>

#include "tfdl/binary_io.hpp"
#include "tfdl/error.hpp"

namespace tfdl {

namespace {
constexpr std::size_t kTripletBytes = 8 + 4 + 4;
}

CodeStore CodeStore::from_codes(const CodeStoreInfo& info, std::span<const SparseCode> codes) {
    CodeStore out;
    out.info_ = info;
    out.info_.num_rows = 0;
    out.append(codes);
    return out;
}

void CodeStore::append(std::span<const SparseCode> codes) {
    for (const auto& code : codes) {
        std::int64_t last = -1;
        for (const auto& e : code.entries) {
            if (e.factor >= info_.m) {
                throw FormatError("factor index " + std::to_string(e.factor) + " out of range for m=" +
                                  std::to_string(info_.m));
            }
            if (static_cast<std::int64_t>(e.factor) <= last) {
                throw FormatError("sparse code entries not strictly ascending");
            }
            last = e.factor;
            const float v = static_cast<float>(e.value);
            if (e.value > info_.drop_threshold && v > 0.0f) {
                factors_.push_back(e.factor);
                values_.push_back(v);
            }
        }
        offsets_.push_back(factors_.size());
        ++info_.num_rows;
    }
}

void CodeStore::check_row(std::uint64_t row) const {
    if (row >= info_.num_rows) {
        throw FormatError("code row " + std::to_string(row) + " out of range");
    }
}

std::span<const std::uint32_t> CodeStore::row_factors(std::uint64_t row) const {
    check_row(row);
    return std::span(factors_).subspan(offsets_[row], offsets_[row + 1] - offsets_[row]);
}

std::span<const float> CodeStore::row_values(std::uint64_t row) const {
    check_row(row);
    return std::span(values_).subspan(offsets_[row], offsets_[row + 1] - offsets_[row]);
}

float CodeStore::value(std::uint64_t row, std::uint32_t factor) const {
    auto f = row_factors(row);
    auto it = std::lower_bound(f.begin(), f.end(), factor);
    if (it == f.end() || *it != factor) {
        return 0.0f;
    }
    return values_[offsets_[row] + static_cast<std::size_t>(it - f.begin())];
}

void CodeStore::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    io::write_magic(out, kCodeStoreMagic);
    io::write_le<std::uint32_t>(out, kCodeStoreVersion);
    io::write_le<std::uint64_t>(out, info_.num_rows);
    io::write_le<std::uint32_t>(out, info_.m);
    io::write_le<std::uint64_t>(out, info_.dict_hash);
    io::write_le<std::uint64_t>(out, info_.store_hash);
    io::write_le<std::uint32_t>(out, info_.num_layers);
    io::write_le<double>(out, info_.drop_threshold);
    io::write_le<double>(out, info_.lambda);
    io::write_le<std::uint64_t>(out, factors_.size());
    for (std::uint64_t row = 0; row < info_.num_rows; ++row) {
        for (std::uint64_t k = offsets_[row]; k < offsets_[row + 1]; ++k) {
            io::write_le<std::uint64_t>(out, row);
            io::write_le<std::uint32_t>(out, factors_[k]);
            io::write_le<float>(out, values_[k]);
        }
    }
    if (!out) {
        throw FormatError("write failed on " + path.string());
    }
}

CodeStore CodeStore::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    io::expect_magic(in, kCodeStoreMagic, path.string());
    const auto version = io::read_le<std::uint32_t>(in, "code store version");
    if (version != kCodeStoreVersion) {
        throw FormatError("unsupported code store version " + std::to_string(version));
    }
    CodeStore cs;
    const auto num_rows = io::read_le<std::uint64_t>(in, "num_rows");
    cs.info_.m = io::read_le<std::uint32_t>(in, "m");
    cs.info_.dict_hash = io::read_le<std::uint64_t>(in, "dict_hash");
    cs.info_.store_hash = io::read_le<std::uint64_t>(in, "store_hash");
    cs.info_.num_layers = io::read_le<std::uint32_t>(in, "num_layers");
    cs.info_.drop_threshold = io::read_le<double>(in, "drop_threshold");
    cs.info_.lambda = io::read_le<double>(in, "lambda");
    const auto num_triplets = io::read_le<std::uint64_t>(in, "num_triplets");
    if (cs.info_.num_layers == 0) {
        throw FormatError(path.string() + ": num_layers is zero");
    }

    const auto header_end = in.tellg();
    in.seekg(0, std::ios::end);
    const auto remaining = static_cast<std::uint64_t>(in.tellg() - header_end);
    in.seekg(header_end);
    if (remaining != num_triplets * kTripletBytes) {
        throw FormatError(path.string() + ": triplet section length mismatch");
    }

    cs.factors_.reserve(num_triplets);
    cs.values_.reserve(num_triplets);
    cs.offsets_.assign(1, 0);
    std::uint64_t current_row = 0;
    std::int64_t last_factor = -1;
    for (std::uint64_t k = 0; k < num_triplets; ++k) {
        const auto row = io::read_le<std::uint64_t>(in, "triplet row");
        const auto factor = io::read_le<std::uint32_t>(in, "triplet factor");
        const auto value = io::read_le<float>(in, "triplet value");
        if (row >= num_rows || factor >= cs.info_.m) {
            throw FormatError(path.string() + ": triplet " + std::to_string(k) + " out of range");
        }
        if (row < current_row || (row == current_row && static_cast<std::int64_t>(factor) <= last_factor)) {
            throw FormatError(path.string() + ": triplets not sorted by (row, factor)");
        }
        while (current_row < row) {
            cs.offsets_.push_back(cs.factors_.size());
            ++current_row;
            last_factor = -1;
        }
        cs.factors_.push_back(factor);
        cs.values_.push_back(value);
        last_factor = factor;
    }
    while (cs.offsets_.size() < num_rows + 1) {
        cs.offsets_.push_back(cs.factors_.size());
    }
    cs.info_.num_rows = num_rows;
    return cs;
}

}  // namespace tfdl
