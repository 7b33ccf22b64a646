#include "xinv/datapipe/balanced_stream.hpp"

#include <algorithm>

#include "xinv/error.hpp"

namespace xinv {

BalancedStream::BalancedStream(std::vector<std::size_t> record_sources, std::size_t source_count,
                               std::size_t batch_size, std::uint64_t seed)
    : members_(source_count), batch_size_(batch_size), rng_(seed) {
  if (batch_size == 0) throw ConfigError("balanced_stream: batch size must be positive");
  if (source_count == 0) throw ConfigError("balanced_stream: no sources");
  for (std::size_t i = 0; i < record_sources.size(); ++i) {
    if (record_sources[i] >= source_count) {
      throw ConfigError("balanced_stream: record " + std::to_string(i) + " has source index " +
                        std::to_string(record_sources[i]) + " >= " + std::to_string(source_count));
    }
    members_[record_sources[i]].push_back(i);
  }
  for (std::size_t s = 0; s < members_.size(); ++s) {
    if (members_[s].empty()) {
      throw ConfigError("balanced_stream: source " + std::to_string(s) + " has no examples");
    }
    per_source_ = std::max(per_source_, members_[s].size());
  }
}

std::vector<Batch> BalancedStream::next_epoch() {
  std::vector<std::size_t> pool;
  pool.reserve(epoch_length());
  for (const auto& members : members_) {
    // Cyclic reshuffled repetition: every record is used once before any repeats.
    std::vector<std::size_t> wrap = members;
    std::size_t taken = 0;
    while (taken < per_source_) {
      std::shuffle(wrap.begin(), wrap.end(), rng_);
      const auto n = std::min(wrap.size(), per_source_ - taken);
      pool.insert(pool.end(), wrap.begin(), wrap.begin() + static_cast<std::ptrdiff_t>(n));
      taken += n;
    }
  }
  std::shuffle(pool.begin(), pool.end(), rng_);

  std::vector<Batch> batches;
  for (std::size_t i = 0; i < pool.size(); i += batch_size_) {
    const auto end = std::min(pool.size(), i + batch_size_);
    batches.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(i),
                         pool.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace xinv
