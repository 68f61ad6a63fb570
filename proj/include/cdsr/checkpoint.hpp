#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "cdsr/common.hpp"
#include "cdsr/tensor.hpp"

namespace cdsr {

/// Versioned binary container of named arrays and strings. Array payloads are
/// raw little-endian scalar bits, so a save/load round trip is exact.
class Archive {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    struct Entry {
        std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
        std::array<std::int64_t, 4> shape{1, 1, 1, 1};
        std::vector<std::uint8_t> bytes;
    };

    void put_string(const std::string& name, const std::string& value) { strings_[name] = value; }

    const std::string& get_string(const std::string& name) const {
        auto it = strings_.find(name);
        CDSR_REQUIRE(it != strings_.end(), "archive: missing string entry " + name);
        return it->second;
    }

    void put_i64(const std::string& name, std::int64_t v) { put_string(name, std::to_string(v)); }
    std::int64_t get_i64(const std::string& name) const { return std::stoll(get_string(name)); }

    bool has_array(const std::string& name) const { return arrays_.count(name) != 0; }
    bool has_string(const std::string& name) const { return strings_.count(name) != 0; }

    template <typename S>
    void put_tensor(const std::string& name, const Tensor<S>& t) {
        Entry e;
        e.dtype = sizeof(S) == 4 ? 0 : 1;
        for (int i = 0; i < 4; ++i) e.shape[i] = t.shape[i];
        e.bytes.resize(static_cast<std::size_t>(t.size()) * sizeof(S));
        std::memcpy(e.bytes.data(), t.data.data(), e.bytes.size());
        arrays_[name] = std::move(e);
    }

    template <typename S>
    Tensor<S> get_tensor(const std::string& name) const {
        auto it = arrays_.find(name);
        CDSR_REQUIRE(it != arrays_.end(), "archive: missing array entry " + name);
        const Entry& e = it->second;
        CDSR_REQUIRE(e.dtype == (sizeof(S) == 4 ? 0 : 1),
                     "archive: scalar type mismatch for " + name);
        Tensor<S> t(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
        CDSR_REQUIRE(e.bytes.size() == static_cast<std::size_t>(t.size()) * sizeof(S),
                     "archive: payload size mismatch for " + name);
        std::memcpy(t.data.data(), e.bytes.data(), e.bytes.size());
        return t;
    }

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

    const std::map<std::string, Entry>& arrays() const { return arrays_; }

private:
    std::map<std::string, std::string> strings_;
    std::map<std::string, Entry> arrays_;
};

}  // namespace cdsr
