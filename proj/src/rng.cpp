// SPDX-License-Identifier: Apache-2.0
#include "invdet/rng.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace invdet {

uint64_t fnv1a64(const void* data, size_t n) {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

uint64_t fnv1a64_str(std::string_view s) { return fnv1a64(s.data(), s.size()); }

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

double Rng::normal() {
    // Box-Muller; u1 kept away from 0 so log stays finite.
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace invdet
