#pragma once

namespace dipw {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dipw
