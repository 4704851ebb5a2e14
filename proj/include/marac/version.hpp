#pragma once

namespace marac {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace marac
