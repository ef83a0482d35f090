#include "lsseg/parallel.hpp"

#include <algorithm>

#ifdef LSSEG_HAVE_OPENMP
#include <omp.h>
#endif

namespace lsseg {

namespace {
int g_threads = 1;
}

void set_num_threads(int n) {
    g_threads = std::max(1, n);
#ifdef LSSEG_HAVE_OPENMP
    omp_set_num_threads(g_threads);
#endif
}

int num_threads() { return g_threads; }

}  // namespace lsseg
