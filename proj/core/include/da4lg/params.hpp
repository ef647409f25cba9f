#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace da4lg {

using Mat = Eigen::MatrixXd;

// Parameters are held as doubles but always at float32-representable values
// (quantized after init and after every optimizer step), so the float32
// checkpoint blobs round-trip bit-exactly.
struct Param {
    std::string name;
    Mat value;
    bool trainable = false;
};

class ParamStore {
public:
    int add(const std::string& name, Mat value, bool trainable = false);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    int index_of(const std::string& name) const;
    Param& at(int i) { return params_[i]; }
    const Param& at(int i) const { return params_[i]; }
    Param& at(const std::string& name) { return params_[index_of(name)]; }
    const Param& at(const std::string& name) const { return params_[index_of(name)]; }
    void remove(const std::string& name);
    int count() const { return static_cast<int>(params_.size()); }

    std::int64_t total_elements() const;
    std::int64_t trainable_elements() const;
    void set_all_trainable(bool t);

private:
    std::vector<Param> params_;
    std::map<std::string, int> index_;
};

// Rounds every entry to its nearest float32 value.
void quantize_f32(Mat& m);

// Sampling helpers used for parameter init (explicit so results are portable).
Mat normal_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

// Serialized blob: u64 rank, i64 dims, then little-endian float32 data (column major
// within our matrices is hidden: blobs are written row-major).
std::vector<std::uint8_t> param_blob(const Mat& m);
Mat param_from_blob(const std::vector<std::uint8_t>& bytes, const std::string& name_for_errors);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string param_checksum(const Mat& m);

}  // namespace da4lg
