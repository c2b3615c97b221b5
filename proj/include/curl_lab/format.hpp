#pragma once

#include <string>

namespace curl {

/// 17 significant digits, '.' decimal separator regardless of locale.
std::string format_double(double x);

}  // namespace curl
