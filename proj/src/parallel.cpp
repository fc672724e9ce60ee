#include "lsnet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string_view>
#include <thread>
#include <vector>

namespace lsnet {
namespace {

std::atomic<int> g_threads{1};

bool deterministic_env() {
  const char* env = std::getenv("LSNET_DETERMINISTIC");
  return env != nullptr && std::string_view(env) == "1";
}

}  // namespace

int thread_count() { return deterministic_env() ? 1 : g_threads.load(); }

void set_thread_count(int threads) { g_threads = std::max(1, threads); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
}

}  // namespace lsnet
