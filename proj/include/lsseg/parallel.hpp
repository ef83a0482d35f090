#pragma once

namespace lsseg {

/// Number of worker threads used by the numeric kernels. Work is always split
/// so that every output element is produced by exactly one thread in a fixed
/// order, so results are bit-identical for any thread count.
void set_num_threads(int n);
int num_threads();

}  // namespace lsseg
