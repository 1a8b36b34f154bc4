#include "boqsa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "boqsa/config.hpp"
#include "boqsa/png_io.hpp"

namespace boqsa {

namespace {

constexpr char kMagic[4] = {'B', 'Q', 'S', 'A'};
constexpr std::uint64_t kMaxRank = 16;

template <typename T>
constexpr DType dtype_of() {
    return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(p[i]) << (8 * i);
    return value;
}

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    const std::uint8_t* take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw IoError("truncated checkpoint " + path_);
        const std::uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    template <typename U>
    U read() {
        return get_le<U>(take(sizeof(U)));
    }
    std::string read_string() {
        const auto n = read<std::uint32_t>();
        const auto* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& path() const { return path_; }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string path_;
};

}  // namespace

template <typename T>
CheckpointTensor CheckpointTensor::from(const std::string& name, const Tensor<T>& tensor) {
    CheckpointTensor out;
    out.name = name;
    out.dtype = dtype_of<T>();
    out.shape = tensor.shape();
    out.payload.reserve(tensor.numel() * sizeof(T));
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T v : tensor.data()) put_le(out.payload, std::bit_cast<Bits>(v));
    return out;
}

template <typename T>
std::vector<T> CheckpointTensor::values() const {
    const std::size_t n = shape_numel(shape);
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = payload.data() + i * dtype_size(dtype);
        if (dtype == DType::f32) {
            out[i] = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(p)));
        } else {
            out[i] = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(p)));
        }
    }
    return out;
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const CheckpointTensor& Checkpoint::get(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw IoError("checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::set<std::string> names;
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le(out, checkpoint.version);
    put_le(out, checkpoint.step);
    put_le(out, static_cast<std::uint32_t>(checkpoint.config_echo.size()));
    out.insert(out.end(), checkpoint.config_echo.begin(), checkpoint.config_echo.end());
    put_le(out, static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& t : checkpoint.tensors) {
        if (!names.insert(t.name).second) throw IoError("duplicate checkpoint tensor name '" + t.name + "'");
        if (t.payload.size() != shape_numel(t.shape) * dtype_size(t.dtype)) {
            throw IoError("checkpoint tensor '" + t.name + "' payload does not match its shape");
        }
        put_le(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        out.push_back(static_cast<std::uint8_t>(t.dtype));
        put_le(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_le(out, static_cast<std::uint64_t>(d));
        out.insert(out.end(), t.payload.begin(), t.payload.end());
    }

    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("cannot write checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r(std::move(bytes), path.string());

    if (std::memcmp(r.take(4), kMagic, 4) != 0) throw IoError("not a checkpoint (bad magic): " + path.string());
    Checkpoint ckpt;
    ckpt.version = r.read<std::uint32_t>();
    if (ckpt.version != Checkpoint::kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version) + " in " + path.string());
    }
    ckpt.step = r.read<std::uint64_t>();
    ckpt.config_echo = r.read_string();
    const auto count = r.read<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        t.name = r.read_string();
        const auto dtype = r.read<std::uint8_t>();
        if (dtype > 1) throw IoError("unknown dtype " + std::to_string(dtype) + " for '" + t.name + "' in " + path.string());
        t.dtype = static_cast<DType>(dtype);
        const auto rank = r.read<std::uint32_t>();
        if (rank > kMaxRank) throw IoError("implausible rank for '" + t.name + "' in " + path.string());
        for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.read<std::uint64_t>()));
        const std::size_t n = shape_numel(t.shape) * dtype_size(t.dtype);
        const auto* p = r.take(n);
        t.payload.assign(p, p + n);
        ckpt.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw IoError("trailing bytes in checkpoint " + path.string());
    return ckpt;
}

template <typename T>
void store_tensors(Checkpoint& checkpoint, const NamedTensors<T>& tensors, const std::string& prefix) {
    for (const auto& [name, t] : tensors) checkpoint.tensors.push_back(CheckpointTensor::from(prefix + name, t));
}

template <typename T>
void restore_tensors(const Checkpoint& checkpoint, NamedTensors<T>& tensors, const std::string& prefix) {
    for (auto& [name, t] : tensors) {
        const CheckpointTensor* entry = checkpoint.find(prefix + name);
        if (!entry) throw ConfigError("checkpoint lacks tensor '" + prefix + name + "'");
        if (entry->shape != t.shape()) {
            throw ConfigError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(entry->shape) +
                              ", model expects " + shape_str(t.shape()));
        }
        const std::vector<T> values = entry->values<T>();
        std::copy(values.begin(), values.end(), t.mutable_data().begin());
    }
}

template CheckpointTensor CheckpointTensor::from<float>(const std::string&, const Tensor<float>&);
template CheckpointTensor CheckpointTensor::from<double>(const std::string&, const Tensor<double>&);
template std::vector<float> CheckpointTensor::values<float>() const;
template std::vector<double> CheckpointTensor::values<double>() const;
template void store_tensors<float>(Checkpoint&, const NamedTensors<float>&, const std::string&);
template void store_tensors<double>(Checkpoint&, const NamedTensors<double>&, const std::string&);
template void restore_tensors<float>(const Checkpoint&, NamedTensors<float>&, const std::string&);
template void restore_tensors<double>(const Checkpoint&, NamedTensors<double>&, const std::string&);

}  // namespace boqsa
