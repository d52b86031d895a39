#pragma once

namespace ctxdiff {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCheckpointMagic = "CTXDIFF-CKPT-1";

}  // namespace ctxdiff
