#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace gaopom {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view data);
Digest sha256(const std::uint8_t* data, std::size_t n);
std::string to_hex(const Digest& d);

}  // namespace gaopom
