#pragma once

#include <string>
#include <string_view>

namespace furrow {

/// Lowercase hex SHA-1 of the bytes.
std::string sha1_hex(std::string_view bytes);

/// Git-style blob digest: SHA-1 over "blob <size>\0<content>".
std::string content_digest(std::string_view content);

}  // namespace furrow
