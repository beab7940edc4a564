#ifndef TREID_IO_HPP
#define TREID_IO_HPP

// On-disk formats.
//
// Tensor container ("RCTR"), little-endian throughout:
//     char[4] magic "RCTR" | u32 version | u32 tensor count
//     per tensor: u32 name length | name bytes | u8 dtype | u32 rank |
//                 u64 dims[rank] | row-major payload
// Records (detections, segments, curves) are JSON lines. Every file a stage
// writes is hashed (SHA-256) into that stage's manifest.

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "treid/error.hpp"
#include "treid/linalg.hpp"

namespace treid::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "RCTR payloads are written in host order");

inline constexpr std::array<char, 4> kMagic{'R', 'C', 'T', 'R'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i64 = 3 };

inline std::string dtype_name(DType d) {
    switch (d) {
        case DType::f32: return "f32";
        case DType::f64: return "f64";
        case DType::i64: return "i64";
    }
    return "?";
}

struct Tensor {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::variant<std::vector<float>, std::vector<double>, std::vector<std::int64_t>> data;

    DType dtype() const { return static_cast<DType>(data.index() + 1); }
    std::size_t elements() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

template <class T>
Tensor make_tensor(std::string name, const Matrix<T>& m) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return {std::move(name), {m.rows(), m.cols()}, m.storage()};
}

template <class T>
Tensor make_tensor(std::string name, const std::vector<T>& v) {
    return {std::move(name), {v.size()}, v};
}

/// A rank-1 or rank-2 real tensor as a matrix in precision T (a vector is
/// one row).
template <class T>
Matrix<T> to_matrix(const Tensor& t) {
    if (t.shape.size() > 2 || t.shape.empty()) throw ManifestError("tensor " + t.name + " is not rank 1 or 2");
    const std::size_t rows = t.shape.size() == 2 ? t.shape[0] : 1;
    const std::size_t cols = t.shape.back();
    return std::visit(
        [&](const auto& v) -> Matrix<T> {
            using E = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<E, std::int64_t>) {
                throw ManifestError("tensor " + t.name + " holds integers, expected reals");
            } else {
                return Matrix<T>(rows, cols, std::vector<T>(v.begin(), v.end()));
            }
        },
        t.data);
}

template <class T>
std::vector<T> to_vector(const Tensor& t) {
    return std::visit([](const auto& v) { return std::vector<T>(v.begin(), v.end()); }, t.data);
}

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ManifestError(path + ": truncated tensor file");
    return v;
}

}  // namespace detail

inline void write_tensors(const fs::path& path, const std::vector<Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InvalidInput("cannot write " + path.string());
    os.write(kMagic.data(), kMagic.size());
    detail::put<std::uint32_t>(os, kFormatVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put<std::uint64_t>(os, d);
        std::visit(
            [&](const auto& v) {
                require(v.size() == t.elements(), "tensor " + t.name + ": payload does not match shape");
                os.write(reinterpret_cast<const char*>(v.data()),
                         static_cast<std::streamsize>(v.size() * sizeof(v[0])));
            },
            t.data);
    }
    if (!os) throw InvalidInput("write failed: " + path.string());
}

inline std::vector<Tensor> read_tensors(const fs::path& path) {
    const std::string p = path.string();
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ManifestError(p + ": missing tensor file");
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic) throw ManifestError(p + ": not an RCTR file");
    const auto version = detail::get<std::uint32_t>(is, p);
    if (version != kFormatVersion) throw ManifestError(p + ": unsupported RCTR version " + std::to_string(version));
    const auto count = detail::get<std::uint32_t>(is, p);
    std::vector<Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t;
        const auto len = detail::get<std::uint32_t>(is, p);
        if (len > 4096) throw ManifestError(p + ": implausible tensor name length");
        t.name.resize(len);
        if (!is.read(t.name.data(), len)) throw ManifestError(p + ": truncated tensor file");
        const auto tag = detail::get<std::uint8_t>(is, p);
        const auto rank = detail::get<std::uint32_t>(is, p);
        if (rank > 8) throw ManifestError(p + ": implausible tensor rank");
        for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(detail::get<std::uint64_t>(is, p));
        auto fill = [&](auto vec) {
            vec.resize(t.elements());
            const auto bytes = static_cast<std::streamsize>(vec.size() * sizeof(vec[0]));
            if (!is.read(reinterpret_cast<char*>(vec.data()), bytes)) throw ManifestError(p + ": truncated tensor file");
            t.data = std::move(vec);
        };
        switch (static_cast<DType>(tag)) {
            case DType::f32: fill(std::vector<float>{}); break;
            case DType::f64: fill(std::vector<double>{}); break;
            case DType::i64: fill(std::vector<std::int64_t>{}); break;
            default: throw ManifestError(p + ": unknown dtype tag " + std::to_string(tag));
        }
        out.push_back(std::move(t));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ManifestError(p + ": trailing bytes after last tensor");
    return out;
}

inline const Tensor& find_tensor(const std::vector<Tensor>& ts, const std::string& name) {
    for (const auto& t : ts)
        if (t.name == name) return t;
    throw ManifestError("tensor '" + name + "' not found");
}

// ---------------------------------------------------------------- records

inline void write_jsonl(const fs::path& path, const std::vector<json>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InvalidInput("cannot write " + path.string());
    for (const auto& r : records) os << r.dump() << '\n';
}

inline std::vector<json> read_jsonl(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ManifestError(path.string() + ": missing record file");
    std::vector<json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InvalidInput("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ManifestError(path.string() + ": missing file");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ManifestError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- digests

inline std::string to_hex(const unsigned char* p, std::size_t n) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(2 * n, '0');
    for (std::size_t i = 0; i < n; ++i) {
        s[2 * i] = digits[p[i] >> 4];
        s[2 * i + 1] = digits[p[i] & 15];
    }
    return s;
}

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("internal", "sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md, &len);
        return to_hex(md, len);
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) {
    Sha256 h;
    h.update(s.data(), s.size());
    return h.hex();
}

inline std::string file_digest(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ManifestError(path.string() + ": missing file");
    Sha256 h;
    std::array<char, 1 << 16> buf;
    while (is) {
        is.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(is.gcount()));
    }
    return h.hex();
}

// ---------------------------------------------------------------- manifests

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Manifest {
    std::string stage;
    std::map<std::string, std::string> inputs;   // path relative to the run dir -> digest
    std::map<std::string, std::string> outputs;  // same
    std::string config_fingerprint;
    std::string started;
    std::string finished;
};

inline json to_json(const Manifest& m) {
    return {{"stage", m.stage},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"config_fingerprint", m.config_fingerprint},
            {"started", m.started},
            {"finished", m.finished}};
}

inline Manifest manifest_from_json(const json& j, const std::string& where) {
    try {
        Manifest m;
        m.stage = j.at("stage").get<std::string>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.config_fingerprint = j.at("config_fingerprint").get<std::string>();
        m.started = j.value("started", "");
        m.finished = j.value("finished", "");
        return m;
    } catch (const json::exception& e) {
        throw ManifestError(where + ": malformed manifest: " + e.what());
    }
}

}  // namespace treid::io

#endif  // TREID_IO_HPP
