#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace procache::detail {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws std::invalid_argument on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace procache::detail
