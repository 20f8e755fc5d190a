#pragma once

#include <cstddef>

// Small dense linear-algebra kernels used by the network code.  A scalar
// reference implementation always exists; an AVX2 variant is compiled when
// the toolchain supports it and selected at runtime via cpuid.  All matrices
// are row-major.
namespace ofnet::kern {

struct Ops {
    const char* name;
    // sum_i x[i]*y[i]
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += a*x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // y = A x, A is m x n
    void (*matvec)(const double* A, const double* x, double* y,
                   std::size_t m, std::size_t n);
    // y = A^T x, A is m x n, y has length n
    void (*matvec_t)(const double* A, const double* x, double* y,
                     std::size_t m, std::size_t n);
    // A += x y^T, A is m x n, x length m, y length n
    void (*ger)(const double* x, const double* y, double* A,
                std::size_t m, std::size_t n);
};

const Ops& scalar();
bool avx2_available();
const Ops& avx2();   // only valid when avx2_available()

// Runtime-selected implementation (AVX2 when the CPU has it).
const Ops& active();

// Force a specific implementation ("scalar" or "avx2"); empty string resets
// to auto-detection.  Returns false for an unknown/unavailable name.
bool force(const char* name);

}  // namespace ofnet::kern
