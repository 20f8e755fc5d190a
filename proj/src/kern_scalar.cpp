#include "ofnet/kern.hpp"

namespace ofnet::kern {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void matvec_scalar(const double* A, const double* x, double* y,
                   std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) y[i] = dot_scalar(A + i * n, x, n);
}

void matvec_t_scalar(const double* A, const double* x, double* y,
                     std::size_t m, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) y[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) axpy_scalar(x[i], A + i * n, y, n);
}

void ger_scalar(const double* x, const double* y, double* A,
                std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) axpy_scalar(x[i], y, A + i * n, n);
}

}  // namespace

const Ops& scalar() {
    static const Ops ops{"scalar", dot_scalar, axpy_scalar,
                         matvec_scalar, matvec_t_scalar, ger_scalar};
    return ops;
}

}  // namespace ofnet::kern
