#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

namespace floq::support {

/// Worker cap for parallel helpers. 0 means "auto" (hardware concurrency,
/// optionally capped by the FLOQUET_THREADS environment variable).
void set_thread_cap(int n);
int thread_cap();

/// Runs fn(i) for i in [0, count). Splits into contiguous chunks, one per
/// worker; falls back to the calling thread when the cap is 1 or count is
/// small. fn must be safe to call concurrently for distinct i.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

/// Floor division for possibly negative numerators: floor_div(-4, 3) == -2.
constexpr long long floor_div(long long a, long long b) {
    long long q = a / b;
    return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

/// Euclidean remainder, always in [0, b): euclid_mod_int(-4, 3) == 2.
constexpr long long euclid_mod_int(long long a, long long b) {
    return a - b * floor_div(a, b);
}

/// Reduces x into [0, period).
inline double euclid_mod(double x, double period) {
    double r = std::fmod(x, period);
    if (r < 0.0) r += period;
    if (r >= period) r = 0.0;  // guards fmod rounding at the seam
    return r;
}

}  // namespace floq::support
