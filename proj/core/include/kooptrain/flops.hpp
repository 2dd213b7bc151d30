#pragma once

#include <cstdint>

namespace koop {

// Multiply-accumulate counters, one slot per pipeline phase. Counts are
// incremented at call sites with the algebraic op count of each matrix or
// elementwise product (rows*cols*inner for a GEMM), not traced instructions.
// All numeric kernels accept a nullable FlopCounter*; pass nullptr to skip
// instrumentation.
struct FlopCounter {
    std::uint64_t forward = 0;
    std::uint64_t backward = 0;
    std::uint64_t update = 0;
    std::uint64_t construction = 0;
    std::uint64_t prediction = 0;

    std::uint64_t total() const {
        return forward + backward + update + construction + prediction;
    }
    std::uint64_t training() const { return forward + backward + update; }
};

inline void add_flops(FlopCounter* fc, std::uint64_t FlopCounter::*slot, std::uint64_t n) {
    if (fc) fc->*slot += n;
}

}  // namespace koop
