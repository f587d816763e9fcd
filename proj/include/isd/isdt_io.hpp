#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "isd/tensor.hpp"

// ISDT tensor files, little-endian:
//   block  := "ISDT" | version u8 (=1) | dtype u8 (0=f32, 1=f64) | ndim u8
//             | ndim x u64 dims | row-major payload
// A plain file is one block. A container is N blocks back to back followed by
//   index  := "ISDX" | u32 count | count x { u16 name_len | name | u64 offset }
//   footer := u64 index_offset | "ISDE"
// All writes go through a temp file + rename.

namespace isd::io {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

struct IsdtData {
    Dtype dtype = Dtype::F32;
    Shape dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t numel() const { return shape_numel(dims); }
    Tensor<float> to_float() const;
    Tensor<double> to_double() const;
};

void write_isdt(const std::filesystem::path& path, const Tensor<float>& t);
void write_isdt(const std::filesystem::path& path, const Tensor<double>& t);

// Reads the first (or only) tensor block of a file.
IsdtData read_isdt(const std::filesystem::path& path);

// Standalone format checker: validates a plain file or a whole container.
// Returns false and fills `why` instead of throwing.
bool check_isdt(const std::filesystem::path& path, std::string* why = nullptr);

class ContainerWriter {
public:
    explicit ContainerWriter(std::filesystem::path path) : path_(std::move(path)) {}
    void add(const std::string& name, const Tensor<float>& t);
    void add(const std::string& name, const Tensor<double>& t);
    void finish();

private:
    std::filesystem::path path_;
    std::string buf_;
    std::vector<std::pair<std::string, std::uint64_t>> entries_;
    bool finished_ = false;
};

class Container {
public:
    static Container load(const std::filesystem::path& path);
    bool has(const std::string& name) const { return offsets_.count(name) != 0; }
    IsdtData get(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    std::string buf_;
    std::map<std::string, std::uint64_t> offsets_;
};

// Binary PGM (P5, maxval 255); input plane is (H,W), values quantized with
// round + clamp on export.
void write_pgm(const std::filesystem::path& path, const Tensor<float>& plane);

// Temp-file + rename write used by every artifact emitter.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

}  // namespace isd::io
