#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace xinv {

/// Record indices making up one minibatch.
using Batch = std::vector<std::size_t>;

/**
 * Balanced multi-source epoch sampler.
 *
 * Each epoch draws max_s |source_s| examples from every source: the largest
 * source contributes each of its records once, smaller sources cycle
 * through fresh shuffles of their records until the quota is met. The pooled
 * epoch is shuffled and cut into batches; the final batch may be short.
 */
class BalancedStream {
 public:
  /// `record_sources[i]` is the source index of record i.
  BalancedStream(std::vector<std::size_t> record_sources, std::size_t source_count,
                 std::size_t batch_size, std::uint64_t seed);

  std::vector<Batch> next_epoch();

  std::size_t epoch_length() const noexcept { return per_source_ * members_.size(); }
  std::size_t per_source() const noexcept { return per_source_; }
  std::size_t batch_size() const noexcept { return batch_size_; }

 private:
  std::vector<std::vector<std::size_t>> members_;
  std::size_t per_source_ = 0;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
};

}  // namespace xinv
