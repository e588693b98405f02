// Copyright the latecache authors. Apache 2.0 licensed; see LICENSE in the project root.
#pragma once

namespace latecache {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace latecache
