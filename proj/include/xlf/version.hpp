#pragma once

namespace xlf {

inline constexpr const char* toolkit_version = "0.1.0";

}  // namespace xlf
