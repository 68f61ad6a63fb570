#include "cdsr/checkpoint.hpp"

#include <fstream>

namespace cdsr {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'S', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_pod<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    const auto n = read_pod<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

}  // namespace

void Archive::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kFormatVersion);

    write_pod<std::uint64_t>(os, strings_.size());
    for (const auto& [name, value] : strings_) {
        write_str(os, name);
        write_str(os, value);
    }
    write_pod<std::uint64_t>(os, arrays_.size());
    for (const auto& [name, e] : arrays_) {
        write_str(os, name);
        write_pod<std::uint8_t>(os, e.dtype);
        for (auto d : e.shape) write_pod<std::int64_t>(os, d);
        write_pod<std::uint64_t>(os, e.bytes.size());
        os.write(reinterpret_cast<const char*>(e.bytes.data()),
                 static_cast<std::streamsize>(e.bytes.size()));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Archive Archive::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    Archive a;
    const auto nstr = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < nstr; ++i) {
        std::string name = read_str(is);
        a.strings_[name] = read_str(is);
    }
    const auto narr = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < narr; ++i) {
        std::string name = read_str(is);
        Entry e;
        e.dtype = read_pod<std::uint8_t>(is);
        for (auto& d : e.shape) d = read_pod<std::int64_t>(is);
        const auto nbytes = read_pod<std::uint64_t>(is);
        e.bytes.resize(nbytes);
        is.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
        if (!is) throw std::runtime_error("checkpoint: truncated array " + name);
        a.arrays_[name] = std::move(e);
    }
    return a;
}

}  // namespace cdsr
