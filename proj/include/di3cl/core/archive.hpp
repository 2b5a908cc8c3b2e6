#pragma once

// Tagged binary archive used for checkpoints and backbone exports.
//
//   "DI3CLARC" | u32 version | u32 entry count | entries...
//   entry: u32 name length | name | u8 kind | u64 element count | payload
//
// Little-endian host order; kinds are f32, f64, i64 and string.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "di3cl/core/error.hpp"

namespace di3cl {

class Archive {
public:
    static constexpr char kMagic[8] = {'D', 'I', '3', 'C', 'L', 'A', 'R', 'C'};
    static constexpr std::uint32_t kVersion = 1;

    enum class Kind : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, str = 3 };

    template <typename T>
    void put(const std::string& name, std::span<const T> values) {
        Entry e;
        e.kind = kind_of<T>();
        e.count = values.size();
        e.bytes.resize(values.size_bytes());
        std::memcpy(e.bytes.data(), values.data(), values.size_bytes());
        entries_[name] = std::move(e);
    }
    template <typename T>
    void put(const std::string& name, const std::vector<T>& values) {
        put(name, std::span<const T>(values));
    }
    void put_int(const std::string& name, std::int64_t v) { put(name, std::span<const std::int64_t>(&v, 1)); }
    void put_double(const std::string& name, double v) { put(name, std::span<const double>(&v, 1)); }
    void put_string(const std::string& name, const std::string& s) {
        Entry e;
        e.kind = Kind::str;
        e.count = s.size();
        e.bytes.assign(s.begin(), s.end());
        entries_[name] = std::move(e);
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    /// Reads a numeric array, converting from the stored precision.
    template <typename T>
    std::vector<T> get(const std::string& name) const {
        const Entry& e = at(name);
        std::vector<T> out(e.count);
        switch (e.kind) {
            case Kind::f32: convert<float>(e, out); break;
            case Kind::f64: convert<double>(e, out); break;
            case Kind::i64: convert<std::int64_t>(e, out); break;
            default: throw IoError("archive entry '" + name + "' is not numeric");
        }
        return out;
    }
    std::int64_t get_int(const std::string& name) const { return single<std::int64_t>(name); }
    double get_double(const std::string& name) const { return single<double>(name); }
    std::string get_string(const std::string& name) const {
        const Entry& e = at(name);
        if (e.kind != Kind::str) throw IoError("archive entry '" + name + "' is not a string");
        return std::string(e.bytes.begin(), e.bytes.end());
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, _] : entries_) out.push_back(k);
        return out;
    }

    /// Writes to a temporary sibling then renames over `path`.
    void save(const std::filesystem::path& path) const {
        const auto tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw IoError("cannot open " + tmp + " for writing");
            out.write(kMagic, sizeof kMagic);
            write_pod(out, kVersion);
            write_pod(out, static_cast<std::uint32_t>(entries_.size()));
            for (const auto& [name, e] : entries_) {
                write_pod(out, static_cast<std::uint32_t>(name.size()));
                out.write(name.data(), static_cast<std::streamsize>(name.size()));
                write_pod(out, static_cast<std::uint8_t>(e.kind));
                write_pod(out, static_cast<std::uint64_t>(e.count));
                out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
            }
            if (!out) throw IoError("write failed for " + tmp);
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
    }

    static Archive load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open archive " + path.string());
        char magic[8];
        in.read(magic, sizeof magic);
        if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError("not a DI3CL archive: " + path.string());
        const auto version = read_pod<std::uint32_t>(in);
        if (version != kVersion) throw IoError("unsupported archive version " + std::to_string(version));
        const auto n = read_pod<std::uint32_t>(in);
        Archive a;
        for (std::uint32_t i = 0; i < n; ++i) {
            const auto len = read_pod<std::uint32_t>(in);
            std::string name(len, '\0');
            in.read(name.data(), len);
            Entry e;
            e.kind = static_cast<Kind>(read_pod<std::uint8_t>(in));
            e.count = read_pod<std::uint64_t>(in);
            e.bytes.resize(e.count * element_size(e.kind));
            in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
            if (!in) throw IoError("truncated archive " + path.string());
            a.entries_[name] = std::move(e);
        }
        return a;
    }

private:
    struct Entry {
        Kind kind = Kind::f32;
        std::size_t count = 0;
        std::vector<std::uint8_t> bytes;
    };

    template <typename T>
    static constexpr Kind kind_of() {
        if constexpr (std::is_same_v<T, float>) return Kind::f32;
        else if constexpr (std::is_same_v<T, double>) return Kind::f64;
        else {
            static_assert(std::is_same_v<T, std::int64_t>, "unsupported archive element type");
            return Kind::i64;
        }
    }
    static std::size_t element_size(Kind k) {
        switch (k) {
            case Kind::f32: return 4;
            case Kind::f64: return 8;
            case Kind::i64: return 8;
            case Kind::str: return 1;
        }
        throw IoError("corrupt archive entry kind");
    }

    const Entry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw IoError("archive has no entry '" + name + "'");
        return it->second;
    }
    template <typename S, typename T>
    static void convert(const Entry& e, std::vector<T>& out) {
        for (std::size_t i = 0; i < e.count; ++i) {
            S v;
            std::memcpy(&v, e.bytes.data() + i * sizeof(S), sizeof(S));
            out[i] = static_cast<T>(v);
        }
    }
    template <typename T>
    T single(const std::string& name) const {
        auto v = get<T>(name);
        if (v.size() != 1) throw IoError("archive entry '" + name + "' is not a scalar");
        return v.front();
    }
    template <typename T>
    static void write_pod(std::ostream& out, T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    template <typename T>
    static T read_pod(std::istream& in) {
        T v{};
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in) throw IoError("truncated archive");
        return v;
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace di3cl
