#pragma once

namespace namelink {

inline constexpr const char* kArtifactVersion = "namelink-0.1.0";

}  // namespace namelink
