#pragma once

// Inner-loop arithmetic kernels.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The variant is chosen once at runtime from CPUID and can be forced
// with DHVT_KERNELS=scalar|avx2 or set_isa(). Both variants accumulate over the
// reduction index in the same sequential order per output element, so they
// differ only by FMA rounding.

#include <cstddef>
#include <string_view>

namespace dhvt::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  T (*dot)(std::size_t n, const T* x, const T* y);
  // y[i] += a * x[i]
  void (*axpy)(std::size_t n, T a, const T* x, T* y);
  // C[m x n] += A[m x k] * B[k x n], all row-major and densely packed.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
};

// Reference implementations. Always available.
template <typename T>
const KernelTable<T>& scalar_table();

// Returns nullptr when the AVX2 variant was not compiled in.
template <typename T>
const KernelTable<T>* avx2_table();

bool cpu_has_avx2();

// Active table for the current process.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();

// Throws std::invalid_argument if the requested ISA is unavailable.
void set_isa(Isa isa);

// C += op(A) * op(B) where op is an optional transpose. A is m x k (k x m when
// trans_a), B is k x n (n x k when trans_b). Transposed operands are packed
// into scratch before calling gemm_nn.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c);

}  // namespace dhvt::kernels
