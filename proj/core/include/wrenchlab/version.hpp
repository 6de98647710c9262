#pragma once

namespace wrenchlab {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wrenchlab
