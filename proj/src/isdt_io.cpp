#include "isd/isdt_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "ISDT I/O assumes a little-endian host");

namespace isd::io {

namespace {

constexpr char kMagicBlock[4] = {'I', 'S', 'D', 'T'};
constexpr char kMagicIndex[4] = {'I', 'S', 'D', 'X'};
constexpr char kMagicEnd[4] = {'I', 'S', 'D', 'E'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kFooterSize = 12;

template <typename T>
void append_raw(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw FormatError("ISDT: truncated file");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

template <typename Scalar>
void append_block(std::string& buf, const Shape& dims, const Scalar* data, std::size_t n) {
    buf.append(kMagicBlock, 4);
    append_raw(buf, kVersion);
    const auto dtype = std::uint8_t(sizeof(Scalar) == 4 ? Dtype::F32 : Dtype::F64);
    append_raw(buf, dtype);
    if (dims.size() > 255) throw FormatError("ISDT: rank too large");
    append_raw(buf, std::uint8_t(dims.size()));
    for (std::size_t d : dims) append_raw(buf, std::uint64_t(d));
    buf.append(reinterpret_cast<const char*>(data), n * sizeof(Scalar));
}

IsdtData parse_block(const std::string& buf, std::size_t& off) {
    if (off + 4 > buf.size() || std::memcmp(buf.data() + off, kMagicBlock, 4) != 0)
        throw FormatError("ISDT: bad magic");
    off += 4;
    const auto version = read_raw<std::uint8_t>(buf, off);
    if (version != kVersion) throw FormatError("ISDT: unknown version " + std::to_string(version));
    const auto dtype = read_raw<std::uint8_t>(buf, off);
    if (dtype > 1) throw FormatError("ISDT: unknown dtype " + std::to_string(dtype));
    const auto ndim = read_raw<std::uint8_t>(buf, off);
    IsdtData out;
    out.dtype = Dtype(dtype);
    out.dims.resize(ndim);
    std::size_t numel = 1;
    for (auto& d : out.dims) {
        const auto v = read_raw<std::uint64_t>(buf, off);
        if (v == 0) throw FormatError("ISDT: zero extent");
        if (numel > (std::size_t(1) << 48) / std::max<std::size_t>(v, 1))
            throw FormatError("ISDT: dim overflow");
        d = std::size_t(v);
        numel *= d;
    }
    const std::size_t elem = dtype == 0 ? 4 : 8;
    if (off + numel * elem > buf.size()) throw FormatError("ISDT: truncated payload");
    if (dtype == 0) {
        out.f32.resize(numel);
        std::memcpy(out.f32.data(), buf.data() + off, numel * elem);
    } else {
        out.f64.resize(numel);
        std::memcpy(out.f64.data(), buf.data() + off, numel * elem);
    }
    off += numel * elem;
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (!f.good() && !f.eof()) throw IoError("read failed for " + path.string());
    return buf;
}

bool has_container_footer(const std::string& buf) {
    return buf.size() >= kFooterSize && std::memcmp(buf.data() + buf.size() - 4, kMagicEnd, 4) == 0;
}

}  // namespace

Tensor<float> IsdtData::to_float() const {
    if (dtype == Dtype::F32) return Tensor<float>::from(dims, f32);
    std::vector<float> v(f64.begin(), f64.end());
    return Tensor<float>::from(dims, std::move(v));
}

Tensor<double> IsdtData::to_double() const {
    if (dtype == Dtype::F64) return Tensor<double>::from(dims, f64);
    std::vector<double> v(f32.begin(), f32.end());
    return Tensor<double>::from(dims, std::move(v));
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create " + tmp.string());
        f.write(bytes.data(), std::streamsize(bytes.size()));
        if (!f.good()) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

void write_isdt(const std::filesystem::path& path, const Tensor<float>& t) {
    std::string buf;
    append_block(buf, t.shape(), t.value().data(), t.numel());
    atomic_write(path, buf);
}

void write_isdt(const std::filesystem::path& path, const Tensor<double>& t) {
    std::string buf;
    append_block(buf, t.shape(), t.value().data(), t.numel());
    atomic_write(path, buf);
}

IsdtData read_isdt(const std::filesystem::path& path) {
    const std::string buf = read_file(path);
    std::size_t off = 0;
    return parse_block(buf, off);
}

bool check_isdt(const std::filesystem::path& path, std::string* why) {
    try {
        const std::string buf = read_file(path);
        std::size_t off = 0;
        if (has_container_footer(buf)) {
            std::size_t foot = buf.size() - kFooterSize;
            const auto index_off = read_raw<std::uint64_t>(buf, foot);
            if (index_off >= buf.size()) throw FormatError("ISDT container: bad index offset");
            // Every block must parse and stop exactly at the index.
            while (off < index_off) parse_block(buf, off);
            if (off != index_off) throw FormatError("ISDT container: block/index misalignment");
            std::size_t idx = index_off;
            if (std::memcmp(buf.data() + idx, kMagicIndex, 4) != 0)
                throw FormatError("ISDT container: bad index magic");
            idx += 4;
            const auto count = read_raw<std::uint32_t>(buf, idx);
            for (std::uint32_t i = 0; i < count; ++i) {
                const auto len = read_raw<std::uint16_t>(buf, idx);
                if (idx + len > buf.size()) throw FormatError("ISDT container: truncated index");
                idx += len;
                const auto entry_off = read_raw<std::uint64_t>(buf, idx);
                if (entry_off >= index_off) throw FormatError("ISDT container: entry offset out of range");
            }
        } else {
            parse_block(buf, off);
            if (off != buf.size()) throw FormatError("ISDT: trailing bytes after tensor");
        }
        return true;
    } catch (const std::exception& e) {
        if (why) *why = e.what();
        return false;
    }
}

void ContainerWriter::add(const std::string& name, const Tensor<float>& t) {
    entries_.emplace_back(name, std::uint64_t(buf_.size()));
    append_block(buf_, t.shape(), t.value().data(), t.numel());
}

void ContainerWriter::add(const std::string& name, const Tensor<double>& t) {
    entries_.emplace_back(name, std::uint64_t(buf_.size()));
    append_block(buf_, t.shape(), t.value().data(), t.numel());
}

void ContainerWriter::finish() {
    if (finished_) return;
    const std::uint64_t index_off = buf_.size();
    buf_.append(kMagicIndex, 4);
    append_raw(buf_, std::uint32_t(entries_.size()));
    for (const auto& [name, off] : entries_) {
        if (name.size() > 0xffff) throw FormatError("ISDT container: name too long");
        append_raw(buf_, std::uint16_t(name.size()));
        buf_.append(name);
        append_raw(buf_, off);
    }
    append_raw(buf_, index_off);
    buf_.append(kMagicEnd, 4);
    atomic_write(path_, buf_);
    finished_ = true;
}

Container Container::load(const std::filesystem::path& path) {
    Container c;
    c.buf_ = read_file(path);
    if (!has_container_footer(c.buf_)) throw FormatError("not an ISDT container: " + path.string());
    std::size_t foot = c.buf_.size() - kFooterSize;
    const auto index_off = read_raw<std::uint64_t>(c.buf_, foot);
    if (index_off >= c.buf_.size()) throw FormatError("ISDT container: bad index offset");
    std::size_t idx = index_off;
    if (std::memcmp(c.buf_.data() + idx, kMagicIndex, 4) != 0)
        throw FormatError("ISDT container: bad index magic");
    idx += 4;
    const auto count = read_raw<std::uint32_t>(c.buf_, idx);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = read_raw<std::uint16_t>(c.buf_, idx);
        if (idx + len > c.buf_.size()) throw FormatError("ISDT container: truncated index");
        std::string name(c.buf_.data() + idx, len);
        idx += len;
        const auto off = read_raw<std::uint64_t>(c.buf_, idx);
        c.offsets_[std::move(name)] = off;
    }
    return c;
}

IsdtData Container::get(const std::string& name) const {
    auto it = offsets_.find(name);
    if (it == offsets_.end()) throw FormatError("ISDT container: no tensor named " + name);
    std::size_t off = it->second;
    return parse_block(buf_, off);
}

std::vector<std::string> Container::names() const {
    std::vector<std::string> out;
    out.reserve(offsets_.size());
    for (const auto& [name, _] : offsets_) out.push_back(name);
    return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& plane) {
    if (plane.ndim() != 2) throw ShapeError("write_pgm expects a 2-d plane");
    const std::size_t h = plane.shape()[0], w = plane.shape()[1];
    std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    buf.reserve(buf.size() + h * w);
    for (const float v : plane.value()) {
        const float q = std::round(v);
        buf.push_back(char(static_cast<unsigned char>(q < 0.0f ? 0.0f : (q > 255.0f ? 255.0f : q))));
    }
    atomic_write(path, buf);
}

}  // namespace isd::io
