#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "stitchnet/errors.hpp"

namespace stitchnet::detail {

template <typename T>
T byteswap_value(T value) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::little) return value;
    else return byteswap_value(value);
}

template <typename T>
void write_le(std::ostream& os, T value) {
    value = to_little(value);
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw DataError(std::string("unexpected end of file while reading ") + what);
    return to_little(value);
}

} // namespace stitchnet::detail
