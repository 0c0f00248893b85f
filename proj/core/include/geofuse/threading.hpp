#pragma once

#include <cstdint>
#include <functional>

namespace geofuse {

// Global worker budget. 0 = use hardware concurrency. The GEOFUSE_THREADS
// environment variable seeds the budget at startup; the CLI --threads flag
// overrides it.
void set_thread_budget(int n);
int thread_budget();

// Static-chunk parallel loop over [0, n). fn(begin, end) must only write
// state owned by its own index range, so results never depend on the
// schedule.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace geofuse
