#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cvdcm/common.hpp"
#include "cvdcm/csv.hpp"

namespace cvdcm {

// Feature-map store. On disk: a raw little-endian float32 row-major matrix
// with a 16-byte header, plus a sidecar CSV mapping image ids to rows.
// In memory the float32 payload is kept verbatim so write(load(f)) is
// byte-identical.
class EmbeddingStore {
public:
    static constexpr char kMagic[9] = "CVDCMEMB";
    static constexpr std::uint32_t kVersion = 1;
    inline static const std::string kIndexHeader = "image_id,row";

    EmbeddingStore() = default;
    EmbeddingStore(int k, std::size_t reserve_rows = 0) : k_(k) {
        require(k > 0, "embedding dimension K must be positive");
        data_.reserve(reserve_rows * static_cast<std::size_t>(k));
    }

    int k() const { return k_; }
    std::size_t rows() const { return k_ ? data_.size() / static_cast<std::size_t>(k_) : 0; }

    std::size_t add(const std::string& image_id, const std::vector<float>& values) {
        require(static_cast<int>(values.size()) == k_, "embedding length mismatch for '" + image_id + "'");
        for (float v : values)
            require(std::isfinite(v), "non-finite embedding value for '" + image_id + "'");
        std::size_t row = rows();
        data_.insert(data_.end(), values.begin(), values.end());
        require(index_.emplace(image_id, row).second, "duplicate image_id '" + image_id + "'");
        return row;
    }

    bool contains(const std::string& image_id) const { return index_.count(image_id) != 0; }

    const float* lookup(const std::string& image_id) const {
        auto it = index_.find(image_id);
        require(it != index_.end(), "missing embedding for image '" + image_id + "'");
        return row_ptr(it->second);
    }

    const float* row_ptr(std::size_t row) const {
        return data_.data() + row * static_cast<std::size_t>(k_);
    }

    std::size_t row_of(const std::string& image_id) const {
        auto it = index_.find(image_id);
        require(it != index_.end(), "missing embedding for image '" + image_id + "'");
        return it->second;
    }

    const std::map<std::string, std::size_t>& index() const { return index_; }

    void save(const std::string& matrix_path, const std::string& index_path) const {
        std::ofstream out(matrix_path, std::ios::binary);
        require(out.good(), "cannot write " + matrix_path);
        out.write(kMagic, 8);
        write_u32(out, kVersion);
        write_u32(out, static_cast<std::uint32_t>(k_));
        out.write(reinterpret_cast<const char*>(data_.data()),
                  static_cast<std::streamsize>(data_.size() * sizeof(float)));
        require(out.good(), "write failed for " + matrix_path);
        std::string idx = kIndexHeader + "\n";
        for (const auto& [id, row] : index_) idx += id + ',' + std::to_string(row) + '\n';
        csv::write_file(index_path, idx);
    }

    static EmbeddingStore load(const std::string& matrix_path, const std::string& index_path) {
        std::ifstream in(matrix_path, std::ios::binary);
        require(in.good(), "cannot open " + matrix_path);
        char magic[8];
        in.read(magic, 8);
        require(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, "bad magic in " + matrix_path);
        std::uint32_t version = read_u32(in, matrix_path);
        require(version == kVersion, "unsupported embeddings version " + std::to_string(version));
        std::uint32_t k = read_u32(in, matrix_path);
        require(k > 0, "K=0 in " + matrix_path);

        EmbeddingStore store(static_cast<int>(k));
        in.seekg(0, std::ios::end);
        auto payload = static_cast<std::size_t>(in.tellg()) - 16;
        require(payload % (k * sizeof(float)) == 0, "truncated matrix in " + matrix_path);
        std::size_t n_rows = payload / (k * sizeof(float));
        store.data_.resize(n_rows * k);
        in.seekg(16);
        in.read(reinterpret_cast<char*>(store.data_.data()), static_cast<std::streamsize>(payload));
        require(static_cast<std::size_t>(in.gcount()) == payload, "short read in " + matrix_path);
        for (float v : store.data_)
            require(std::isfinite(v), "non-finite value in " + matrix_path);

        for (const auto& row : csv::read_rows(index_path, kIndexHeader)) {
            require(row.size() == 2, "bad index row in " + index_path);
            long r = csv::parse_long(row[1], index_path);
            require(r >= 0 && static_cast<std::size_t>(r) < n_rows,
                    "index row " + row[1] + " out of range in " + index_path);
            require(store.index_.emplace(row[0], static_cast<std::size_t>(r)).second,
                    "duplicate image_id '" + row[0] + "' in " + index_path);
        }
        return store;
    }

private:
    static void write_u32(std::ofstream& out, std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }

    static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        require(in.gcount() == 4, "truncated header in " + path);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    int k_ = 0;
    std::vector<float> data_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace cvdcm
