#pragma once

namespace emvamp {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kResultSchemaVersion = 1;

}  // namespace emvamp
