#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfw {

/// A non-finite value appeared in a simulation, filter or training run.
class NumericalDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every particle weight underflowed to zero.
class WeightCollapse : public NumericalDivergence {
 public:
  using NumericalDivergence::NumericalDivergence;
};

/// Training of the network for observation step k (and substep n, -1 if not
/// applicable) produced a non-finite loss.
class TrainingDivergence : public NumericalDivergence {
 public:
  TrainingDivergence(int k, int n, const std::string& what)
      : NumericalDivergence(what), k_(k), n_(n) {}
  int step() const { return k_; }
  int substep() const { return n_; }

 private:
  int k_;
  int n_;
};

struct Event {
  std::string category;
  std::string message;
};

/// Thread-safe append-only record of recoverable numerical events
/// (jitter escalation, proposal fallback, divergence, ...).
class EventLog {
 public:
  void record(std::string category, std::string message) {
    std::lock_guard lock(mutex_);
    events_.push_back({std::move(category), std::move(message)});
  }

  std::vector<Event> events() const {
    std::lock_guard lock(mutex_);
    return events_;
  }

  std::map<std::string, std::size_t> counts() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, std::size_t> out;
    for (const auto& e : events_) ++out[e.category];
    return out;
  }

  std::size_t count(const std::string& category) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& e : events_) n += (e.category == category);
    return n;
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

inline void record_event(EventLog* log, std::string category, std::string message) {
  if (log) log->record(std::move(category), std::move(message));
}

}  // namespace dfw
