#include "dcat/kernels.hpp"

#include <cstdlib>
#include <string>

namespace dcat::kernels {

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#ifdef DCAT_HAVE_AVX2
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
#ifdef DCAT_HAVE_AVX2
  if (isa == Isa::Avx2) return avx2_table();
#endif
  (void)isa;
  return scalar_table();
}

Isa active_isa() {
  static const Isa selected = [] {
    if (const char* env = std::getenv("DCAT_KERNELS"); env && std::string(env) == "scalar") {
      return Isa::Scalar;
    }
    return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
  }();
  return selected;
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

const KernelTable& active() {
  static const KernelTable& table = table_for(active_isa());
  return table;
}

}  // namespace dcat::kernels
