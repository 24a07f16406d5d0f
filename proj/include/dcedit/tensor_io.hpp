#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dcedit {

/// One dense tensor as stored on disk. Layout, bit-exact:
///   magic "TNSR" | version u8 = 1 | dtype u8 (0 = f32, 1 = f64) | rank u8 |
///   reserved u8 = 0 | rank x u64 little-endian dims | row-major
///   little-endian payload.
/// Public artifacts use dtype 0; trace containers use dtype 1 so a reloaded
/// trace replays bit-identically.
enum class TensorDType : std::uint8_t { F32 = 0, F64 = 1 };

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> values;  // held as doubles regardless of on-disk dtype

    std::uint64_t element_count() const;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor, TensorDType dtype);
Tensor decode_tensor(const std::uint8_t* bytes, std::size_t size, const std::string& what);

void write_tensor_file(const std::string& path, const Tensor& tensor, TensorDType dtype);
Tensor read_tensor_file(const std::string& path);

/// Container of named tensors with an index header:
///   magic "TNSC" | version u8 = 1 | reserved u8 x 3 | count u32 LE |
///   count x [name_len u16 LE | name bytes | offset u64 LE | size u64 LE] |
///   tensor blobs (each a full TNSR image) at the recorded offsets.
struct NamedTensor {
    std::string name;
    Tensor tensor;
    TensorDType dtype = TensorDType::F64;
};

void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& entries);
std::map<std::string, Tensor> read_tensor_archive(const std::string& path);

/// Writes to a temp sibling then renames, so readers never observe a partial
/// file.
void write_file_atomic(const std::string& path, const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace dcedit
