#pragma once

namespace weakcorr {

inline constexpr const char* version_string = "0.1.0";

}  // namespace weakcorr
