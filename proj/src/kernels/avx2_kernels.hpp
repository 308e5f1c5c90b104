#pragma once

// Raw entry points of the AVX2/FMA translation unit. That unit is compiled
// with -mavx2 -mfma, so it must not include any header that instantiates
// inline library code shared with the rest of the program.

#include <cstddef>

namespace dhvt::kernels::avx2 {

float dot_f32(std::size_t n, const float* x, const float* y);
double dot_f64(std::size_t n, const double* x, const double* y);
void axpy_f32(std::size_t n, float a, const float* x, float* y);
void axpy_f64(std::size_t n, double a, const double* x, double* y);
void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float* c);
void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double* c);

}  // namespace dhvt::kernels::avx2
