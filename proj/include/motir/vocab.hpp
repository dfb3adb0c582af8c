#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "motir/error.hpp"

namespace motir {

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by five specials.
namespace vocab {
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kImgStart = 258;
inline constexpr int kImgEnd = 259;
inline constexpr int kPad = 260;
inline constexpr int kSize = 261;

inline bool is_special(int id) noexcept { return id >= 256; }
}  // namespace vocab

inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

/// Inverse of tokenize; special ids are rejected.
inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    require(id >= 0 && id < 256, ErrorKind::InvalidArgument, "cannot detokenize special or invalid id " + std::to_string(id));
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace motir
