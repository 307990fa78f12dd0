#include "steve/replay_buffer.hpp"

#include <bit>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace steve {

namespace {

std::uint64_t fold(std::uint64_t hash, double value) {
  hash ^= std::bit_cast<std::uint64_t>(value);
  return hash * 0x100000001b3ULL;
}

std::uint64_t fold(std::uint64_t hash, const Eigen::VectorXd& values) {
  hash = fold(hash, static_cast<double>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) hash = fold(hash, values(i));
  return hash;
}

}  // namespace

std::uint64_t transition_checksum(const Transition& t) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  hash = fold(hash, t.state);
  hash = fold(hash, t.action);
  hash = fold(hash, t.reward);
  hash = fold(hash, t.next_state);
  return fold(hash, t.done ? 1.0 : 0.0);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  slots_.reserve(capacity < (1u << 16) ? capacity : (1u << 16));
}

std::size_t ReplayBuffer::size() const {
  std::shared_lock lock(mutex_);
  return slots_.size();
}

std::uint64_t ReplayBuffer::total_added() const {
  std::shared_lock lock(mutex_);
  return total_added_;
}

void ReplayBuffer::add(Transition transition) {
  Slot slot;
  slot.checksum = transition_checksum(transition);
  slot.transition = std::move(transition);
  std::unique_lock lock(mutex_);
  if (slots_.size() < capacity_) {
    slots_.push_back(std::move(slot));
  } else {
    slots_[next_] = std::move(slot);
  }
  next_ = (next_ + 1) % capacity_;
  ++total_added_;
}

const ReplayBuffer::Slot& ReplayBuffer::slot_for_age(std::size_t age_index) const {
  if (slots_.size() < capacity_) return slots_[age_index];
  return slots_[(next_ + age_index) % capacity_];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, Rng& rng) const {
  std::shared_lock lock(mutex_);
  if (slots_.empty()) throw std::runtime_error("ReplayBuffer: sampling from empty buffer");
  std::vector<std::size_t> indices(count);
  const auto last = static_cast<std::int64_t>(slots_.size()) - 1;
  for (auto& index : indices) index = static_cast<std::size_t>(rng.uniform_int(0, last));
  return indices;
}

TransitionBatch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  std::shared_lock lock(mutex_);
  if (batch_size == 0 || slots_.size() < batch_size) {
    throw std::runtime_error("ReplayBuffer: holds " + std::to_string(slots_.size()) +
                             " transitions, minibatch needs " + std::to_string(batch_size));
  }
  const auto last = static_cast<std::int64_t>(slots_.size()) - 1;
  const Transition& first = slots_.front().transition;
  const auto n = static_cast<Eigen::Index>(batch_size);
  TransitionBatch batch;
  batch.states.resize(first.state.size(), n);
  batch.actions.resize(first.action.size(), n);
  batch.next_states.resize(first.next_state.size(), n);
  batch.rewards.resize(n);
  batch.dones.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Slot& slot = slots_[static_cast<std::size_t>(rng.uniform_int(0, last))];
    if (transition_checksum(slot.transition) != slot.checksum) {
      throw std::runtime_error("ReplayBuffer: checksum mismatch on sampled transition");
    }
    const Transition& t = slot.transition;
    batch.states.col(i) = t.state;
    batch.actions.col(i) = t.action;
    batch.next_states.col(i) = t.next_state;
    batch.rewards(i) = t.reward;
    batch.dones(i) = t.done ? 1.0 : 0.0;
  }
  verified_.fetch_add(batch_size);
  return batch;
}

Transition ReplayBuffer::at(std::size_t age_index) const {
  std::shared_lock lock(mutex_);
  if (age_index >= slots_.size()) throw std::out_of_range("ReplayBuffer::at");
  return slot_for_age(age_index).transition;
}

std::vector<Transition> ReplayBuffer::contents() const {
  std::shared_lock lock(mutex_);
  std::vector<Transition> out;
  out.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) out.push_back(slot_for_age(i).transition);
  return out;
}

}  // namespace steve
