#pragma once

namespace protoseg {
inline constexpr const char* kVersion = "0.1.0";
}
