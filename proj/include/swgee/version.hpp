#pragma once

namespace swgee {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace swgee
