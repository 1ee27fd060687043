#pragma once

namespace layerlens {

// Report/output format version carried by JSON emissions.
inline constexpr const char* kSpecVersion = "1.0.0";

}  // namespace layerlens
