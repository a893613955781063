#pragma once

#include <cstdio>
#include <string>

namespace soc {

/// Shortest round-trippable decimal form, locale independent.
inline std::string csv_number(double v) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        double back = 0.0;
        if (std::sscanf(buf, "%lf", &back) == 1 && back == v) break;
    }
    return buf;
}

}  // namespace soc
