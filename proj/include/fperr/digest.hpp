#pragma once

#include <cstdint>
#include <string>

namespace fperr {

/// 128-bit MD5 digest as a lowercase hex string. Used as the compressed
/// signature for optimizer-query memoization; not a security boundary.
std::string md5_hex(const std::string& data);

}  // namespace fperr
