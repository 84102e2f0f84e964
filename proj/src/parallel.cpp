#include "icbir/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

#include "icbir/error.hpp"

namespace icbir {

int resolve_thread_count(int requested) {
  if (requested < 0) raise(ErrorCode::Parameter, "thread count must be >= 0");
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ICBIR_THREADS")) {
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || parsed < 1) {
      raise(ErrorCode::Config, "ICBIR_THREADS must be a positive integer");
    }
    return static_cast<int>(parsed);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
  if (workers <= 1) {
    fn(0, count);
    return;
  }
  // Fixed contiguous partition; worker w owns [w*chunk, min((w+1)*chunk, count)).
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    if (begin >= count) break;
    const std::size_t end = std::min(begin + chunk, count);
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(0, std::min(chunk, count));
  for (std::thread& t : pool) t.join();
}

}  // namespace icbir
