#include "dcedit/tensor_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dcedit/error.hpp"

namespace dcedit {

namespace {

constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
constexpr char kArchiveMagic[4] = {'T', 'N', 'S', 'C'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_uint(const std::uint8_t* p, int bytes) {
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

Error truncated(const std::string& what) {
    return Error(ErrorCode::Io, "truncated or corrupt tensor data in " + what);
}

}  // namespace

std::uint64_t Tensor::element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor, TensorDType dtype) {
    if (tensor.dims.empty() || tensor.dims.size() > 255) {
        throw Error(ErrorCode::InvalidArgument, "tensor rank must be in [1,255]");
    }
    if (tensor.element_count() != tensor.values.size()) {
        throw Error(ErrorCode::InvalidArgument, "tensor payload does not match its dims");
    }
    std::vector<std::uint8_t> out;
    out.reserve(8 + 8 * tensor.dims.size() + tensor.values.size() * 8);
    out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
    out.push_back(1);  // version
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(static_cast<std::uint8_t>(tensor.dims.size()));
    out.push_back(0);  // reserved
    for (auto d : tensor.dims) put_u64(out, d);
    if (dtype == TensorDType::F32) {
        for (double v : tensor.values) {
            float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    } else {
        for (double v : tensor.values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u64(out, bits);
        }
    }
    return out;
}

Tensor decode_tensor(const std::uint8_t* bytes, std::size_t size, const std::string& what) {
    if (size < 8 || std::memcmp(bytes, kTensorMagic, 4) != 0) {
        throw truncated(what);
    }
    if (bytes[4] != 1) {
        throw Error(ErrorCode::Io, "unsupported tensor version in " + what);
    }
    const std::uint8_t dtype = bytes[5];
    if (dtype != 0 && dtype != 1) {
        throw Error(ErrorCode::Io, "unsupported tensor dtype in " + what);
    }
    const std::size_t rank = bytes[6];
    if (rank == 0 || size < 8 + 8 * rank) {
        throw truncated(what);
    }
    Tensor tensor;
    tensor.dims.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        tensor.dims[i] = get_uint(bytes + 8 + 8 * i, 8);
    }
    const std::uint64_t count = tensor.element_count();
    const std::size_t elem_size = dtype == 0 ? 4 : 8;
    const std::size_t offset = 8 + 8 * rank;
    if (size != offset + count * elem_size) {
        throw truncated(what);
    }
    tensor.values.resize(count);
    const std::uint8_t* payload = bytes + offset;
    for (std::uint64_t i = 0; i < count; ++i) {
        if (dtype == 0) {
            std::uint32_t bits = static_cast<std::uint32_t>(get_uint(payload + i * 4, 4));
            float f;
            std::memcpy(&f, &bits, 4);
            tensor.values[i] = static_cast<double>(f);
        } else {
            std::uint64_t bits = get_uint(payload + i * 8, 8);
            double d;
            std::memcpy(&d, &bits, 8);
            tensor.values[i] = d;
        }
    }
    return tensor;
}

void write_tensor_file(const std::string& path, const Tensor& tensor, TensorDType dtype) {
    auto bytes = encode_tensor(tensor, dtype);
    write_file_atomic(path, bytes.data(), bytes.size());
}

Tensor read_tensor_file(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return decode_tensor(bytes.data(), bytes.size(), "'" + path + "'");
}

void write_tensor_archive(const std::string& path, const std::vector<NamedTensor>& entries) {
    std::size_t header_size = 4 + 1 + 3 + 4;
    for (const auto& e : entries) {
        if (e.name.empty() || e.name.size() > 0xFFFF) {
            throw Error(ErrorCode::InvalidArgument, "archive entry name length out of range");
        }
        header_size += 2 + e.name.size() + 8 + 8;
    }
    std::vector<std::vector<std::uint8_t>> blobs;
    blobs.reserve(entries.size());
    for (const auto& e : entries) blobs.push_back(encode_tensor(e.tensor, e.dtype));

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kArchiveMagic, kArchiveMagic + 4);
    out.push_back(1);
    out.push_back(0);
    out.push_back(0);
    out.push_back(0);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = header_size;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        put_u16(out, static_cast<std::uint16_t>(entries[i].name.size()));
        out.insert(out.end(), entries[i].name.begin(), entries[i].name.end());
        put_u64(out, offset);
        put_u64(out, blobs[i].size());
        offset += blobs[i].size();
    }
    for (const auto& blob : blobs) out.insert(out.end(), blob.begin(), blob.end());
    write_file_atomic(path, out.data(), out.size());
}

std::map<std::string, Tensor> read_tensor_archive(const std::string& path) {
    auto bytes = read_file_bytes(path);
    const std::string what = "'" + path + "'";
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0 || bytes[4] != 1) {
        throw Error(ErrorCode::Io, "not a tensor archive: " + what);
    }
    const std::uint32_t count = static_cast<std::uint32_t>(get_uint(bytes.data() + 8, 4));
    std::map<std::string, Tensor> entries;
    std::size_t pos = 12;
    for (std::uint32_t i = 0; i < count; ++i) {
        if (pos + 2 > bytes.size()) throw truncated(what);
        const std::size_t name_len = get_uint(bytes.data() + pos, 2);
        pos += 2;
        if (pos + name_len + 16 > bytes.size()) throw truncated(what);
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        const std::uint64_t offset = get_uint(bytes.data() + pos, 8);
        const std::uint64_t size = get_uint(bytes.data() + pos + 8, 8);
        pos += 16;
        if (offset + size > bytes.size() || offset + size < offset) throw truncated(what);
        entries.emplace(std::move(name),
                        decode_tensor(bytes.data() + offset, static_cast<std::size_t>(size), what));
    }
    return entries;
}

void write_file_atomic(const std::string& path, const std::uint8_t* data, std::size_t size) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorCode::Io, "cannot create '" + tmp + "'");
        }
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) {
            throw Error(ErrorCode::Io, "short write to '" + tmp + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorCode::Io, "cannot move '" + tmp + "' into place: " + ec.message());
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open '" + path + "'");
    }
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw Error(ErrorCode::Io, "cannot read '" + path + "'");
    }
    return bytes;
}

}  // namespace dcedit
