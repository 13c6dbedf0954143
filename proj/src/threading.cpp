#include "lauerl/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace lauerl {

int worker_count() {
  static const int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("LAUERL_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) hw = std::min(hw, cap);
    }
    return hw;
  }();
  return n;
}

void parallel_for(int n, const std::function<void(int, int, int)>& fn) {
  if (n <= 0) return;
  const int workers = std::min(worker_count(), n);
  if (workers == 1) {
    fn(0, n, 0);
    return;
  }
  const int base = n / workers;
  const int extra = n % workers;
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  int begin = 0;
  for (int c = 0; c < workers; ++c) {
    const int len = base + (c < extra ? 1 : 0);
    const int end = begin + len;
    if (c == workers - 1) {
      fn(begin, end, c);  // last chunk on the calling thread
    } else {
      threads.emplace_back([&fn, begin, end, c] { fn(begin, end, c); });
    }
    begin = end;
  }
  for (auto& t : threads) t.join();
}

}  // namespace lauerl
