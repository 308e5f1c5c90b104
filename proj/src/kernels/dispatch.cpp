#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhvt/kernels.hpp"

#if defined(DHVT_HAVE_AVX2)
#include "avx2_kernels.hpp"
#endif

namespace dhvt::kernels {
namespace {

Isa detect_isa() {
  if (const char* forced = std::getenv("DHVT_KERNELS")) {
    const std::string value(forced);
    if (value == "scalar") return Isa::kScalar;
    if (value == "avx2" && cpu_has_avx2()) return Isa::kAvx2;
  }
  return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<Isa>& isa_state() {
  static std::atomic<Isa> state{detect_isa()};
  return state;
}

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, std::vector<T>& dst) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool cpu_has_avx2() {
#if defined(DHVT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return has;
#else
  return false;
#endif
}

template <>
const KernelTable<float>* avx2_table<float>() {
#if defined(DHVT_HAVE_AVX2)
  static const KernelTable<float> table{Isa::kAvx2, &avx2::dot_f32, &avx2::axpy_f32,
                                        &avx2::gemm_nn_f32};
  return cpu_has_avx2() ? &table : nullptr;
#else
  return nullptr;
#endif
}

template <>
const KernelTable<double>* avx2_table<double>() {
#if defined(DHVT_HAVE_AVX2)
  static const KernelTable<double> table{Isa::kAvx2, &avx2::dot_f64, &avx2::axpy_f64,
                                         &avx2::gemm_nn_f64};
  return cpu_has_avx2() ? &table : nullptr;
#else
  return nullptr;
#endif
}

Isa active_isa() { return isa_state().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (isa == Isa::kAvx2 && !cpu_has_avx2())
    throw std::invalid_argument("AVX2 kernels are not available on this build or CPU");
  isa_state().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& active() {
  if (active_isa() == Isa::kAvx2) {
    if (const auto* table = avx2_table<T>()) return *table;
  }
  return scalar_table<T>();
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c) {
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<T> a_packed;
  thread_local std::vector<T> b_packed;
  if (trans_a) {
    transpose_into(k, m, a, a_packed);
    a = a_packed.data();
  }
  if (trans_b) {
    transpose_into(n, k, b, b_packed);
    b = b_packed.data();
  }
  active<T>().gemm_nn(m, n, k, a, b, c);
}

template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();
template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*);

}  // namespace dhvt::kernels
