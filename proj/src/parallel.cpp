#include "rbdsde/parallel.hpp"

#include <atomic>

namespace rbdsde {
namespace {
std::atomic<unsigned> g_threads{1};
}

void set_thread_count(unsigned threads) {
  g_threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
}

unsigned thread_count() { return g_threads; }

}  // namespace rbdsde
