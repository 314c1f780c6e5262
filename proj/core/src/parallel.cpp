#include "pidi/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace pidi {
namespace {

std::atomic<int> g_threads{0};
thread_local bool t_inside_worker = false;

int default_threads() {
  if (const char* env = std::getenv("PIDI_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

void set_num_threads(int threads) { g_threads.store(threads > 0 ? threads : 0); }

int num_threads() {
  const int t = g_threads.load();
  return t > 0 ? t : default_threads();
}

void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk) {
  if (count == 0) return;
  const std::size_t chunk_floor = std::max<std::size_t>(1, min_chunk);
  std::size_t workers = static_cast<std::size_t>(num_threads());
  workers = std::min(workers, (count + chunk_floor - 1) / chunk_floor);
  if (workers <= 1 || t_inside_worker) {
    fn(0, count);
    return;
  }
  const std::size_t base = count / workers;
  const std::size_t extra = count % workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  std::size_t begin = 0;
  std::size_t first_end = 0;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t end = begin + base + (t < extra ? 1 : 0);
    if (t == 0) {
      first_end = end;
    } else {
      pool.emplace_back([&fn, begin, end] {
        t_inside_worker = true;
        fn(begin, end);
      });
    }
    begin = end;
  }
  t_inside_worker = true;
  fn(0, first_end);
  t_inside_worker = false;
}

}  // namespace pidi
