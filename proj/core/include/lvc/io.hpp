#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lvc/tensor.hpp"

namespace lvc {

// ---- CVGT tensor container ------------------------------------------------
//
// Little-endian layout:
//   magic 'C','V','G','T' | version u32 (=1) | rank u32 | dims rank x u64 |
//   dtype u8 (0 = float32, 1 = float64) | payload_len u32 | payload row-major
//
// The format is fixed-endianness and carries no platform-dependent fields.

inline constexpr uint8_t kDtypeF32 = 0;
inline constexpr uint8_t kDtypeF64 = 1;

template <typename T>
struct Array {
    Shape shape;
    std::vector<T> data;

    size_t size() const { return data.size(); }
    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }
};

void write_tensor_f32(const std::filesystem::path& path, const Shape& shape, const std::vector<float>& data);
void write_tensor_f64(const std::filesystem::path& path, const Shape& shape, const std::vector<double>& data);

// dtype of the stored payload without reading it all.
uint8_t read_tensor_dtype(const std::filesystem::path& path);

Array<float> read_tensor_f32(const std::filesystem::path& path);    // converts f64 payloads
Array<double> read_tensor_f64(const std::filesystem::path& path);   // converts f32 payloads

template <typename T>
void write_tensor(const std::filesystem::path& path, const Shape& shape, const std::vector<T>& data) {
    if constexpr (sizeof(T) == 4)
        write_tensor_f32(path, shape, data);
    else
        write_tensor_f64(path, shape, data);
}

template <typename T>
Array<T> read_tensor(const std::filesystem::path& path) {
    if constexpr (sizeof(T) == 4)
        return read_tensor_f32(path);
    else
        return read_tensor_f64(path);
}

// ---- key=value text files ---------------------------------------------------

// Ordered key=value lines, UTF-8, one pair per line. Used for dataset and
// checkpoint manifests and for reports.
class KvFile {
  public:
    void set(const std::string& key, const std::string& value);
    void set_u64(const std::string& key, uint64_t value);
    void set_f64(const std::string& key, double value);
    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_f64(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& lines() const { return lines_; }

    void save(const std::filesystem::path& path) const;
    static KvFile load(const std::filesystem::path& path);
    std::string to_string() const;

  private:
    std::vector<std::pair<std::string, std::string>> lines_;
    std::map<std::string, size_t> index_;
};

// ---- run configuration -------------------------------------------------------
//
// Flat key=value configuration. Every key has a default; unknown keys are
// rejected at parse time. The full effective configuration is echoed into
// reports and output manifests.
class RunConfig {
  public:
    RunConfig();  // defaults

    static RunConfig from_file(const std::filesystem::path& path);
    void apply_line(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    int64_t get_i64(const std::string& key) const;
    double get_f64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    void set(const std::string& key, const std::string& value);

    const std::vector<std::pair<std::string, std::string>>& lines() const { return lines_; }
    KvFile echo(const std::string& prefix = "config.") const;

  private:
    std::vector<std::pair<std::string, std::string>> lines_;
    std::map<std::string, size_t> index_;
    void add_default(const std::string& key, const std::string& value);
};

uint64_t checksum_file(const std::filesystem::path& path);
// Order-stable checksum over the files of a directory tree (sorted relative
// paths and contents).
uint64_t checksum_tree(const std::filesystem::path& dir);

}  // namespace lvc
