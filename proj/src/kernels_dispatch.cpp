#include "arbhedge/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace arbhedge::kernels {

const KernelTable* avx2_kernels_compiled();

const KernelTable* avx2_kernels() {
#if defined(__x86_64__) || defined(__i386__)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? avx2_kernels_compiled() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active_kernels() {
  static const KernelTable* table = [] {
    const char* env = std::getenv("ARBHEDGE_SIMD");
    if (env && std::strcmp(env, "scalar") == 0) return &scalar_kernels();
    const KernelTable* avx = avx2_kernels();
    return avx ? avx : &scalar_kernels();
  }();
  return *table;
}

}  // namespace arbhedge::kernels
