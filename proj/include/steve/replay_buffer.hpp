#ifndef STEVE_REPLAY_BUFFER_HPP
#define STEVE_REPLAY_BUFFER_HPP

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <shared_mutex>
#include <vector>

#include "steve/batch.hpp"
#include "steve/environments.hpp"
#include "steve/rng.hpp"

namespace steve {

std::uint64_t transition_checksum(const Transition& t);

// Bounded FIFO of transitions with uniform sampling. Writers take an
// exclusive lock and readers a shared one, so any number of samplers may run
// alongside a single insertion path. Each slot carries a checksum written
// with the transition and verified when it is sampled.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  ReplayBuffer(const ReplayBuffer&) = delete;
  ReplayBuffer& operator=(const ReplayBuffer&) = delete;

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const;
  std::uint64_t total_added() const;

  // Evicts the oldest transition when full.
  void add(Transition transition);

  // Uniform with replacement. Throws std::runtime_error if fewer than
  // `batch_size` transitions are stored, or if a checksum does not verify.
  TransitionBatch sample(std::size_t batch_size, Rng& rng) const;
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

  // Oldest first.
  Transition at(std::size_t age_index) const;
  std::vector<Transition> contents() const;

  std::uint64_t verified_samples() const { return verified_.load(); }

 private:
  struct Slot {
    Transition transition;
    std::uint64_t checksum = 0;
  };

  const Slot& slot_for_age(std::size_t age_index) const;

  std::size_t capacity_;
  mutable std::shared_mutex mutex_;
  std::vector<Slot> slots_;
  std::size_t next_ = 0;
  std::uint64_t total_added_ = 0;
  mutable std::atomic<std::uint64_t> verified_{0};
};

}  // namespace steve

#endif  // STEVE_REPLAY_BUFFER_HPP
