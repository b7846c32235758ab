#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "relume/common.hpp"
#include "relume/tensor.hpp"

namespace relume {

/// Versioned container of named float arrays (with shapes), strings and
/// integers. Saves are atomic: written to a sibling temp file, then renamed.
class Archive {
public:
    struct Array {
        Shape shape;
        std::vector<float> data;
    };

    std::map<std::string, Array> arrays;
    std::map<std::string, std::string> strings;
    std::map<std::string, std::uint64_t> ints;

    void put_tensor(const std::string& name, const Tensor& t) {
        arrays[name] = Array{t.shape(), t.values()};
    }

    /// Copies into an existing tensor; shape must match exactly.
    void get_tensor(const std::string& name, Tensor& t) const {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw LoadError("Archive: missing array: " + name);
        if (it->second.shape != t.shape())
            throw LoadError("Archive: shape mismatch for " + name + ": stored " +
                            shape_str(it->second.shape) + " vs expected " + shape_str(t.shape()));
        t.values() = it->second.data;
    }

    /// Raw float copy with a shape check; for non-tensor state buffers.
    std::vector<float> get_array(const std::string& name, const Shape& expected) const {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw LoadError("Archive: missing array: " + name);
        if (it->second.shape != expected)
            throw LoadError("Archive: shape mismatch for " + name + ": stored " +
                            shape_str(it->second.shape) + " vs expected " + shape_str(expected));
        return it->second.data;
    }

    std::uint64_t get_int(const std::string& name) const {
        auto it = ints.find(name);
        if (it == ints.end()) throw LoadError("Archive: missing integer: " + name);
        return it->second;
    }

    const std::string& get_string(const std::string& name) const {
        auto it = strings.find(name);
        if (it == strings.end()) throw LoadError("Archive: missing string: " + name);
        return it->second;
    }

    void save(const std::filesystem::path& path) const {
        std::filesystem::path tmp = path;
        tmp += ".tmp";
        {
            std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("Archive: cannot open for write: " + tmp.string());
            os.write(kMagic, 4);
            write_u64(os, kVersion);
            write_u64(os, ints.size());
            for (const auto& [k, v] : ints) {
                write_str(os, k);
                write_u64(os, v);
            }
            write_u64(os, strings.size());
            for (const auto& [k, v] : strings) {
                write_str(os, k);
                write_str(os, v);
            }
            write_u64(os, arrays.size());
            for (const auto& [k, a] : arrays) {
                write_str(os, k);
                write_u64(os, a.shape.size());
                for (int d : a.shape) write_u64(os, static_cast<std::uint64_t>(d));
                write_u64(os, a.data.size());
                os.write(reinterpret_cast<const char*>(a.data.data()),
                         static_cast<std::streamsize>(a.data.size() * 4));
            }
            if (!os) throw IoError("Archive: short write to " + tmp.string());
        }
        std::error_code ec;
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw IoError("Archive: cannot rename " + tmp.string() + " to " + path.string());
    }

    static Archive load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("Archive: cannot open: " + path.string());
        char magic[4];
        is.read(magic, 4);
        if (!is || std::string(magic, 4) != kMagic)
            throw LoadError("Archive: bad magic in " + path.string());
        if (read_u64(is, path) != kVersion)
            throw LoadError("Archive: unsupported version in " + path.string());
        Archive a;
        for (std::uint64_t n = read_u64(is, path); n > 0; --n) {
            std::string k = read_str(is, path);
            a.ints[k] = read_u64(is, path);
        }
        for (std::uint64_t n = read_u64(is, path); n > 0; --n) {
            std::string k = read_str(is, path);
            a.strings[k] = read_str(is, path);
        }
        for (std::uint64_t n = read_u64(is, path); n > 0; --n) {
            std::string k = read_str(is, path);
            Array arr;
            for (std::uint64_t nd = read_u64(is, path); nd > 0; --nd)
                arr.shape.push_back(static_cast<int>(read_u64(is, path)));
            arr.data.resize(read_u64(is, path));
            is.read(reinterpret_cast<char*>(arr.data.data()),
                    static_cast<std::streamsize>(arr.data.size() * 4));
            if (!is) throw LoadError("Archive: truncated array data in " + path.string());
            a.arrays[k] = std::move(arr);
        }
        return a;
    }

private:
    static constexpr const char* kMagic = "RLCK";
    static constexpr std::uint64_t kVersion = 1;

    static void write_u64(std::ostream& os, std::uint64_t v) {
        os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    static void write_str(std::ostream& os, const std::string& s) {
        write_u64(os, s.size());
        os.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    static std::uint64_t read_u64(std::istream& is, const std::filesystem::path& path) {
        std::uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!is) throw LoadError("Archive: truncated file: " + path.string());
        return v;
    }
    static std::string read_str(std::istream& is, const std::filesystem::path& path) {
        std::uint64_t n = read_u64(is, path);
        std::string s(n, '\0');
        is.read(s.data(), static_cast<std::streamsize>(n));
        if (!is) throw LoadError("Archive: truncated string in " + path.string());
        return s;
    }
};

} // namespace relume
