#include "lunar/state_machine.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include <fmt/format.h>

namespace lunar::mission {

const StateMachine::Entry* StateMachine::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

bool StateMachine::is_terminal(const std::string& outcome) const {
  return std::find(terminal_.begin(), terminal_.end(), outcome) != terminal_.end();
}

const std::string* StateMachine::active() const {
  return active_ ? &entries_[*active_].name : nullptr;
}

void StateMachine::enter_state(std::size_t index, Context& ctx, double t) {
  active_ = index;
  pending_fault_.reset();
  records_.push_back({entries_[index].name, "", t, t, "", {}});
  record_open_ = true;
  try {
    entries_[index].state->on_enter(ctx);
  } catch (const MachineAborted&) {
    throw;
  } catch (const std::exception& e) {
    pending_fault_ = e.what();
  }
}

void StateMachine::on_enter(Context& ctx) {
  records_.clear();
  record_open_ = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == initial_) {
      enter_state(i, ctx, ctx.now);
      return;
    }
  }
  throw Error("initial state missing");
}

std::optional<std::string> StateMachine::tick(Context& ctx) {
  if (!active_) throw Error(fmt::format("machine '{}' ticked while inactive", name_));
  const std::size_t idx = *active_;
  auto& entry = entries_[idx];
  auto* child_machine = dynamic_cast<StateMachine*>(entry.state.get());

  std::optional<std::string> outcome;
  std::string error;
  if (pending_fault_) {
    outcome = kFault;
    error = *pending_fault_;
    pending_fault_.reset();
  } else {
    try {
      outcome = entry.state->tick(ctx);
      if (outcome) {
        const auto declared = entry.state->outcomes();
        if (std::find(declared.begin(), declared.end(), *outcome) == declared.end())
          throw Error(fmt::format("state '{}' returned undeclared outcome '{}'", entry.name, *outcome));
      }
    } catch (const MachineAborted&) {
      close_open(kAborted, ctx.now + ctx.tick_period);
      throw;
    } catch (const std::exception& e) {
      outcome = kFault;
      error = e.what();
    }
  }
  if (!outcome) return std::nullopt;

  const double t_end = ctx.now + ctx.tick_period;
  auto& rec = records_.back();
  rec.outcome = *outcome;
  rec.t_end = t_end;
  rec.error = error;
  if (child_machine) {
    if (*outcome == kFault) child_machine->close_open(kFault, t_end);
    rec.children = child_machine->records();
  }
  record_open_ = false;

  const auto it = entry.transitions.find(*outcome);
  if (it == entry.transitions.end()) {
    active_.reset();
    rec.outcome = kFault;
    throw MachineAborted(fmt::format("{}/{}: {}", name_, entry.name,
                                     error.empty() ? "unrouted outcome " + *outcome : error));
  }
  if (is_terminal(it->second)) {
    active_.reset();
    return it->second;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == it->second) {
      enter_state(i, ctx, t_end);
      return std::nullopt;
    }
  }
  throw Error(fmt::format("transition target '{}' missing", it->second));
}

void StateMachine::on_preempt(Context& ctx) {
  if (active_) entries_[*active_].state->on_preempt(ctx);
  close_open(kPreempted, ctx.now);
}

void StateMachine::close_open(const std::string& outcome, double t) {
  if (!record_open_ || records_.empty()) {
    active_.reset();
    return;
  }
  auto& rec = records_.back();
  if (active_) {
    if (auto* child = dynamic_cast<StateMachine*>(entries_[*active_].state.get())) {
      child->close_open(outcome, t);
      rec.children = child->records();
    }
  }
  rec.outcome = outcome;
  rec.t_end = t;
  record_open_ = false;
  active_.reset();
}

StateMachineBuilder::StateMachineBuilder(std::string name, std::vector<std::string> terminal_outcomes)
    : name_(std::move(name)), terminal_(std::move(terminal_outcomes)) {}

StateMachineBuilder& StateMachineBuilder::add(std::string name, std::shared_ptr<State> state,
                                              std::map<std::string, std::string> transitions) {
  entries_.push_back({std::move(name), std::move(state), std::move(transitions)});
  return *this;
}

StateMachineBuilder& StateMachineBuilder::initial(std::string name) {
  initial_ = std::move(name);
  return *this;
}

std::shared_ptr<StateMachine> StateMachineBuilder::build(std::vector<std::string>* warnings) const {
  if (!initial_) throw ConfigError(fmt::format("machine '{}' has no initial state", name_));
  if (terminal_.empty()) throw ConfigError(fmt::format("machine '{}' has no terminal outcomes", name_));

  std::set<std::string> names;
  for (const auto& e : entries_) {
    if (!e.state) throw ConfigError(fmt::format("state '{}' is null", e.name));
    if (!names.insert(e.name).second) throw ConfigError(fmt::format("duplicate state '{}'", e.name));
    if (std::find(terminal_.begin(), terminal_.end(), e.name) != terminal_.end())
      throw ConfigError(fmt::format("state '{}' shadows a terminal outcome", e.name));
  }
  if (!names.count(*initial_))
    throw ConfigError(fmt::format("initial state '{}' is not declared", *initial_));

  auto is_terminal = [&](const std::string& s) {
    return std::find(terminal_.begin(), terminal_.end(), s) != terminal_.end();
  };
  for (const auto& e : entries_) {
    const auto declared = e.state->outcomes();
    for (const auto& [outcome, target] : e.transitions) {
      if (!names.count(target) && !is_terminal(target))
        throw ConfigError(fmt::format("state '{}' outcome '{}' targets undeclared state '{}'", e.name,
                                      outcome, target));
      if (outcome != kFault && std::find(declared.begin(), declared.end(), outcome) == declared.end())
        throw ConfigError(
            fmt::format("state '{}' maps outcome '{}' it never returns", e.name, outcome));
    }
    for (const auto& o : declared) {
      if (!e.transitions.count(o))
        throw ConfigError(fmt::format("state '{}' outcome '{}' has no transition", e.name, o));
    }
  }

  if (warnings) {
    std::set<std::string> seen{*initial_};
    std::deque<std::string> queue{*initial_};
    while (!queue.empty()) {
      const std::string s = queue.front();
      queue.pop_front();
      for (const auto& e : entries_) {
        if (e.name != s) continue;
        for (const auto& [o, target] : e.transitions)
          if (names.count(target) && seen.insert(target).second) queue.push_back(target);
      }
    }
    for (const auto& e : entries_)
      if (!seen.count(e.name)) warnings->push_back(fmt::format("state '{}' is unreachable", e.name));
  }

  std::shared_ptr<StateMachine> m(new StateMachine());
  m->name_ = name_;
  m->entries_ = entries_;
  m->terminal_ = terminal_;
  m->initial_ = *initial_;
  return m;
}

ExecutionTrace sm_execute(StateMachine& machine, Context& ctx, const ExecuteOptions& opts) {
  ExecutionTrace trace;
  machine.on_enter(ctx);
  while (true) {
    if (opts.preempt && *opts.preempt) {
      machine.on_preempt(ctx);
      trace.final_outcome = kPreempted;
      break;
    }
    if (opts.tick_budget > 0 && trace.ticks >= opts.tick_budget) {
      machine.close_open(kTimeout, ctx.now);
      trace.final_outcome = kTimeout;
      break;
    }
    std::optional<std::string> outcome;
    try {
      outcome = machine.tick(ctx);
    } catch (const MachineAborted& e) {
      ctx.now += ctx.tick_period;
      ++trace.ticks;
      trace.final_outcome = kAborted;
      trace.error = e.what();
      break;
    }
    ctx.now += ctx.tick_period;
    ++trace.ticks;
    if (opts.after_tick) opts.after_tick(ctx);
    if (outcome) {
      trace.final_outcome = *outcome;
      break;
    }
  }
  trace.records = machine.records();
  return trace;
}

namespace {

bool is_interruption(const std::string& outcome) {
  return outcome == kPreempted || outcome == kTimeout || outcome == kAborted || outcome == kFault;
}

}  // namespace

bool trace_consistent(const StateMachine& machine, const std::vector<TraceRecord>& records,
                      std::string* why) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (records.empty()) return true;
  if (records.front().state != machine.initial())
    return fail(fmt::format("first state '{}' is not the initial state", records.front().state));
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const auto* entry = machine.find(r.state);
    if (!entry) return fail(fmt::format("record {} names unknown state '{}'", k, r.state));
    if (r.t_end < r.t_start) return fail(fmt::format("record {} ends before it starts", k));
    if (k > 0 && r.t_start < records[k - 1].t_end)
      return fail(fmt::format("record {} starts before the previous one ends", k));
    if (auto* child = dynamic_cast<const StateMachine*>(entry->state.get())) {
      if (!trace_consistent(*child, r.children, why)) return false;
    }
    const auto it = entry->transitions.find(r.outcome);
    if (k + 1 < records.size()) {
      if (it == entry->transitions.end() || it->second != records[k + 1].state)
        return fail(fmt::format("'{}' --{}--> '{}' is not a declared transition", r.state,
                                r.outcome, records[k + 1].state));
    } else if (it == entry->transitions.end()) {
      if (!is_interruption(r.outcome))
        return fail(fmt::format("last outcome '{}' of '{}' has no transition", r.outcome, r.state));
    } else if (!machine.is_terminal(it->second) && !is_interruption(r.outcome)) {
      return fail(fmt::format("trace ends in '{}' without reaching a terminal outcome", r.state));
    }
  }
  return true;
}

}  // namespace lunar::mission
