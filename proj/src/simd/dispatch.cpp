#include <cstdlib>
#include <cstring>

#include "qtseg/errors.hpp"
#include "qtseg/simd/kernels.hpp"

namespace qtseg::simd {
namespace {

// Build-time availability of the AVX2 translation unit.
#if defined(QTSEG_HAVE_AVX2_BUILD)
constexpr bool kAvx2Built = true;
#else
constexpr bool kAvx2Built = false;
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Level detect_level() {
  if (const char* env = std::getenv("QTSEG_SIMD")) {
    if (std::strcmp(env, "scalar") == 0) return Level::kScalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!avx2_available()) {
        throw NumericError("QTSEG_SIMD=avx2 requested but AVX2 is unavailable");
      }
      return Level::kAvx2;
    }
    throw ConfigError(std::string("unknown QTSEG_SIMD value: ") + env);
  }
  return avx2_available() ? Level::kAvx2 : Level::kScalar;
}

// Detection runs once; force_level (tests only) can override afterwards.
Level& current_level() {
  static Level level = detect_level();
  return level;
}

int64_t* g_mac_counter = nullptr;

}  // namespace

bool avx2_available() { return kAvx2Built && cpu_has_avx2(); }

Level active_level() { return current_level(); }

void force_level(Level level) {
  if (level == Level::kAvx2 && !avx2_available()) {
    throw NumericError("cannot force AVX2 kernels: unavailable on this host/build");
  }
  current_level() = level;
}

const KernelTable& table() {
#if defined(QTSEG_HAVE_AVX2_BUILD)
  if (current_level() == Level::kAvx2) return avx2::kTable;
#endif
  return scalar::kTable;
}

const char* active_name() { return table().name; }

void set_mac_counter(int64_t* counter) { g_mac_counter = counter; }

int64_t* mac_counter() { return g_mac_counter; }

}  // namespace qtseg::simd
