#include "avatar_forge/array_file.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace avatar_forge {

namespace {

constexpr const char* kMagic = "AVF1";

const char* dtype_name(DType d) { return d == DType::float64 ? "float64" : "int32"; }

void append_le(std::string& out, std::uint64_t bits, int nbytes) {
    for (int i = 0; i < nbytes; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

std::uint64_t read_le(const std::string& in, size_t pos, int nbytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

bool valid_token(const std::string& s) {
    return !s.empty() && s.find('\n') == std::string::npos && s.find('=') == std::string::npos;
}

std::int64_t parse_int(const std::string& s, const std::string& what) {
    if (s.empty()) throw ParseError("empty integer in " + what);
    size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw ParseError("bad integer '" + s + "' in " + what);
    }
    if (used != s.size() || v < 0) throw ParseError("bad integer '" + s + "' in " + what);
    return v;
}

}  // namespace

std::int64_t ArrayFile::Array::element_count() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void ArrayFile::set_meta(const std::string& key, const std::string& value) {
    if (!valid_token(key) || value.find('\n') != std::string::npos)
        throw IoError("invalid metadata entry '" + key + "'");
    for (auto& kv : meta_)
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    meta_.emplace_back(key, value);
}

std::optional<std::string> ArrayFile::meta(const std::string& key) const {
    for (const auto& kv : meta_)
        if (kv.first == key) return kv.second;
    return std::nullopt;
}

const std::string& ArrayFile::require_meta(const std::string& key) const {
    for (const auto& kv : meta_)
        if (kv.first == key) return kv.second;
    throw ParseError("missing header key meta." + key);
}

void ArrayFile::put(const std::string& name, Array a) {
    if (!valid_token(name)) throw IoError("invalid array name '" + name + "'");
    if (!arrays_.count(name)) order_.push_back(name);
    arrays_[name] = std::move(a);
}

void ArrayFile::set_ints(const std::string& name, const std::vector<std::int32_t>& values) {
    Array a;
    a.dtype = DType::int32;
    a.shape = {static_cast<std::int64_t>(values.size())};
    a.i32 = values;
    put(name, std::move(a));
}

bool ArrayFile::has(const std::string& name) const { return arrays_.count(name) > 0; }

const ArrayFile::Array& ArrayFile::array(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ParseError("missing array '" + name + "'");
    return it->second;
}

namespace {

void check_2d(const std::string& name, const ArrayFile::Array& a, Index rows, Index cols) {
    if (a.shape.size() != 2) throw DimensionError("array '" + name + "' is not 2-D");
    if ((rows >= 0 && a.shape[0] != rows) || (cols >= 0 && a.shape[1] != cols)) {
        std::ostringstream os;
        os << "array '" << name << "' has shape " << a.shape[0] << "x" << a.shape[1] << ", expected "
           << rows << "x" << cols;
        throw DimensionError(os.str());
    }
}

}  // namespace

Matrix ArrayFile::matrix(const std::string& name, Index rows, Index cols) const {
    const Array& a = array(name);
    if (a.dtype != DType::float64) throw DimensionError("array '" + name + "' is not float64");
    check_2d(name, a, rows, cols);
    Matrix m(a.shape[0], a.shape[1]);
    std::copy(a.f64.begin(), a.f64.end(), m.data());
    return m;
}

Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ArrayFile::int_matrix(
    const std::string& name, Index rows, Index cols) const {
    const Array& a = array(name);
    if (a.dtype != DType::int32) throw DimensionError("array '" + name + "' is not int32");
    check_2d(name, a, rows, cols);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(a.shape[0], a.shape[1]);
    std::copy(a.i32.begin(), a.i32.end(), m.data());
    return m;
}

std::vector<std::int32_t> ArrayFile::ints(const std::string& name, Index count) const {
    const Array& a = array(name);
    if (a.dtype != DType::int32) throw DimensionError("array '" + name + "' is not int32");
    if (a.shape.size() != 1) throw DimensionError("array '" + name + "' is not 1-D");
    if (count >= 0 && a.shape[0] != count)
        throw DimensionError("array '" + name + "' has length " + std::to_string(a.shape[0]) +
                             ", expected " + std::to_string(count));
    return a.i32;
}

std::string ArrayFile::serialize() const {
    std::string out = std::string(kMagic) + "\n";
    for (const auto& [k, v] : meta_) out += "meta." + k + "=" + v + "\n";
    for (const auto& name : order_) {
        const Array& a = arrays_.at(name);
        out += "array." + name + "=" + dtype_name(a.dtype) + ":";
        for (size_t i = 0; i < a.shape.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(a.shape[i]);
        }
        out += "\n";
    }
    out += "\n";
    for (const auto& name : order_) {
        const Array& a = arrays_.at(name);
        if (a.dtype == DType::float64)
            for (double v : a.f64) append_le(out, std::bit_cast<std::uint64_t>(v), 8);
        else
            for (std::int32_t v : a.i32)
                append_le(out, static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(v)), 4);
    }
    return out;
}

ArrayFile ArrayFile::parse(const std::string& bytes) {
    ArrayFile f;
    size_t pos = 0;
    auto next_line = [&](std::string& line) {
        size_t nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw ParseError("truncated header");
        line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
    };
    std::string line;
    next_line(line);
    if (line != kMagic) throw ParseError("bad magic, expected AVF1");
    std::vector<std::pair<std::string, Array>> pending;
    while (true) {
        next_line(line);
        if (line.empty()) break;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("header line without '=': " + line);
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key.rfind("meta.", 0) == 0) {
            f.meta_.emplace_back(key.substr(5), value);
        } else if (key.rfind("array.", 0) == 0) {
            const size_t colon = value.find(':');
            if (colon == std::string::npos) throw ParseError("array spec without dtype: " + line);
            Array a;
            const std::string dt = value.substr(0, colon);
            if (dt == "float64")
                a.dtype = DType::float64;
            else if (dt == "int32")
                a.dtype = DType::int32;
            else
                throw ParseError("unknown dtype '" + dt + "'");
            std::stringstream dims(value.substr(colon + 1));
            std::string d;
            while (std::getline(dims, d, ',')) a.shape.push_back(parse_int(d, line));
            if (a.shape.empty()) throw ParseError("array without shape: " + line);
            pending.emplace_back(key.substr(6), std::move(a));
        } else {
            throw ParseError("unknown header key '" + key + "'");
        }
    }
    for (auto& [name, a] : pending) {
        const std::int64_t n = a.element_count();
        const int width = a.dtype == DType::float64 ? 8 : 4;
        if (static_cast<std::int64_t>(bytes.size() - pos) < n * width)
            throw ParseError("truncated payload in array '" + name + "'");
        if (a.dtype == DType::float64) {
            a.f64.resize(static_cast<size_t>(n));
            for (std::int64_t i = 0; i < n; ++i, pos += 8)
                a.f64[static_cast<size_t>(i)] = std::bit_cast<double>(read_le(bytes, pos, 8));
        } else {
            a.i32.resize(static_cast<size_t>(n));
            for (std::int64_t i = 0; i < n; ++i, pos += 4)
                a.i32[static_cast<size_t>(i)] =
                    std::bit_cast<std::int32_t>(static_cast<std::uint32_t>(read_le(bytes, pos, 4)));
        }
        if (f.arrays_.count(name)) throw ParseError("duplicate array '" + name + "'");
        f.put(name, std::move(a));
    }
    if (pos != bytes.size()) throw ParseError("trailing bytes after payload");
    return f;
}

void ArrayFile::write(const std::string& path) const {
    const std::string bytes = serialize();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

ArrayFile ArrayFile::read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

}  // namespace avatar_forge
