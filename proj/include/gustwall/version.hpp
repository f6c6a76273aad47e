#pragma once

namespace gustwall {
inline constexpr const char* kVersion = "0.3.0";
}
