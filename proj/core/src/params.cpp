#include "da4lg/params.hpp"

#include <cstring>
#include <openssl/sha.h>

#include "da4lg/errors.hpp"

namespace da4lg {

int ParamStore::add(const std::string& name, Mat value, bool trainable) {
    if (index_.count(name)) throw StateError("duplicate parameter name " + name);
    quantize_f32(value);
    int idx = static_cast<int>(params_.size());
    params_.push_back(Param{name, std::move(value), trainable});
    index_[name] = idx;
    return idx;
}

int ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter " + name);
    return it->second;
}

void ParamStore::remove(const std::string& name) {
    int idx = index_of(name);
    params_.erase(params_.begin() + idx);
    index_.clear();
    for (int i = 0; i < static_cast<int>(params_.size()); ++i) index_[params_[i].name] = i;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
    return n;
}

std::int64_t ParamStore::trainable_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += static_cast<std::int64_t>(p.value.size());
    return n;
}

void ParamStore::set_all_trainable(bool t) {
    for (auto& p : params_) p.trainable = t;
}

void quantize_f32(Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

Mat normal_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = dist(rng);
    return m;
}

std::vector<std::uint8_t> param_blob(const Mat& m) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + 16 + m.size() * 4);
    auto push_u64 = [&out](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xff));
    };
    push_u64(2);  // rank
    push_u64(static_cast<std::uint64_t>(m.rows()));
    push_u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            float f = static_cast<float>(m(i, j));
            std::uint32_t u;
            std::memcpy(&u, &f, 4);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((u >> (8 * b)) & 0xff));
        }
    }
    return out;
}

Mat param_from_blob(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    auto read_u64 = [&bytes, &name](std::size_t at) -> std::uint64_t {
        if (at + 8 > bytes.size()) throw LoadError("truncated blob header for parameter " + name);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(bytes[at + b]) << (8 * b);
        return v;
    };
    std::uint64_t rank = read_u64(0);
    if (rank != 2) throw LoadError("unsupported blob rank for parameter " + name);
    std::uint64_t rows = read_u64(8), cols = read_u64(16);
    std::size_t need = 24 + rows * cols * 4;
    if (bytes.size() != need)
        throw LoadError("blob byte count mismatch for parameter " + name + " (expected " +
                        std::to_string(need) + ", got " + std::to_string(bytes.size()) + ")");
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t at = 24;
    for (std::uint64_t i = 0; i < rows; ++i) {
        for (std::uint64_t j = 0; j < cols; ++j) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[at + b]) << (8 * b);
            at += 4;
            float f;
            std::memcpy(&f, &u, 4);
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(f);
        }
    }
    return m;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(bytes.data(), bytes.size(), digest);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (unsigned char c : digest) {
        out.push_back(hex[c >> 4]);
        out.push_back(hex[c & 0xf]);
    }
    return out;
}

std::string param_checksum(const Mat& m) { return sha256_hex(param_blob(m)); }

}  // namespace da4lg
