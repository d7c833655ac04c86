#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lunar/common.hpp"

namespace lunar::mission {

inline const std::string kPreempted = "preempted";
inline const std::string kTimeout = "timeout";
inline const std::string kFault = "fault";
inline const std::string kAborted = "aborted";

struct Context {
  virtual ~Context() = default;
  double now = 0.0;          // s
  double tick_period = 0.05;  // s
};

// Tick-driven state: on_enter once, then tick until it yields an outcome.
class State {
 public:
  virtual ~State() = default;
  virtual std::vector<std::string> outcomes() const = 0;
  virtual void on_enter(Context&) {}
  virtual std::optional<std::string> tick(Context& ctx) = 0;
  virtual void on_preempt(Context&) {}
};

/// State assembled from callables; handy for tests and glue states.
class LambdaState : public State {
 public:
  using Enter = std::function<void(Context&)>;
  using Tick = std::function<std::optional<std::string>(Context&)>;

  LambdaState(std::vector<std::string> outcomes, Tick tick, Enter enter = {})
      : outcomes_(std::move(outcomes)), tick_(std::move(tick)), enter_(std::move(enter)) {}

  std::vector<std::string> outcomes() const override { return outcomes_; }
  void on_enter(Context& ctx) override {
    if (enter_) enter_(ctx);
  }
  std::optional<std::string> tick(Context& ctx) override { return tick_(ctx); }

 private:
  std::vector<std::string> outcomes_;
  Tick tick_;
  Enter enter_;
};

struct TraceRecord {
  std::string state;
  std::string outcome;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string error;                  // message of a fault, if any
  std::vector<TraceRecord> children;  // records of a nested machine
};

struct ExecutionTrace {
  std::vector<TraceRecord> records;
  std::string final_outcome;
  std::string error;
  long ticks = 0;
};

class StateMachine : public State {
 public:
  struct Entry {
    std::string name;
    std::shared_ptr<State> state;
    std::map<std::string, std::string> transitions;  // outcome -> state or terminal outcome
  };

  std::vector<std::string> outcomes() const override { return terminal_; }
  void on_enter(Context& ctx) override;
  std::optional<std::string> tick(Context& ctx) override;
  void on_preempt(Context& ctx) override;

  const std::string& name() const { return name_; }
  const std::string& initial() const { return initial_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const Entry* find(const std::string& name) const;
  bool is_terminal(const std::string& outcome) const;
  const std::string* active() const;

  /// Records of the current or last activation.
  const std::vector<TraceRecord>& records() const { return records_; }
  /// Closes every open record with the given outcome (used on preemption and timeout).
  void close_open(const std::string& outcome, double t);

 private:
  friend class StateMachineBuilder;
  StateMachine() = default;

  void enter_state(std::size_t index, Context& ctx, double t);

  std::string name_;
  std::vector<Entry> entries_;
  std::vector<std::string> terminal_;
  std::string initial_;
  std::optional<std::size_t> active_;
  std::optional<std::string> pending_fault_;  // raised by on_enter, reported on the next tick
  std::vector<TraceRecord> records_;
  bool record_open_ = false;
};

class StateMachineBuilder {
 public:
  StateMachineBuilder(std::string name, std::vector<std::string> terminal_outcomes);

  StateMachineBuilder& add(std::string name, std::shared_ptr<State> state,
                           std::map<std::string, std::string> transitions);
  StateMachineBuilder& initial(std::string name);

  /// Throws ConfigError on dangling targets, a missing or unknown initial
  /// state, duplicate names, or unmapped outcomes. Unreachable states are
  /// reported through `warnings`.
  std::shared_ptr<StateMachine> build(std::vector<std::string>* warnings = nullptr) const;

 private:
  std::string name_;
  std::vector<std::string> terminal_;
  std::vector<StateMachine::Entry> entries_;
  std::optional<std::string> initial_;
};

/// Thrown through nested machines when a fault has no route.
class MachineAborted : public Error {
 public:
  using Error::Error;
};

struct ExecuteOptions {
  long tick_budget = 0;             // 0: unlimited
  const bool* preempt = nullptr;    // polled between ticks
  std::function<void(Context&)> after_tick;  // observer, e.g. to set the preempt flag
};

ExecutionTrace sm_execute(StateMachine& machine, Context& ctx, const ExecuteOptions& opts);

/// Checks that consecutive records follow declared transitions and that the
/// first record is the initial state, recursively for nested machines.
bool trace_consistent(const StateMachine& machine, const std::vector<TraceRecord>& records,
                      std::string* why = nullptr);

}  // namespace lunar::mission
