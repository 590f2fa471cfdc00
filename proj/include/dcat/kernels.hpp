#pragma once

// Dense double-precision kernels used by the NCDM interaction network and the
// selection policy. Every kernel has a scalar reference implementation; on
// x86-64 an AVX2/FMA variant is chosen at runtime when the CPU supports it.
// Set DCAT_KERNELS=scalar in the environment to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace dcat::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x + bias, W row-major rows x cols; bias may be null
  void (*gemv)(const double* w, const double* x, const double* bias, double* y, std::size_t rows,
               std::size_t cols);
  // y += W^T x, W row-major rows x cols, x has rows entries, y has cols entries
  void (*gemv_t_acc)(const double* w, const double* x, double* y, std::size_t rows,
                     std::size_t cols);
  // W += alpha * x y^T
  void (*ger)(double alpha, const double* x, const double* y, double* w, std::size_t rows,
              std::size_t cols);
};

const KernelTable& scalar_table();
#ifdef DCAT_HAVE_AVX2
const KernelTable& avx2_table();
#endif

// Tables compiled into this binary that the running CPU can execute.
bool isa_available(Isa isa);
const KernelTable& table_for(Isa isa);

// Selected once per process.
Isa active_isa();
std::string_view isa_name(Isa isa);
const KernelTable& active();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace dcat::kernels
