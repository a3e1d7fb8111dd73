// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace zsc {

inline constexpr const char* kVersion = "zsc-0.1.0";

}  // namespace zsc
