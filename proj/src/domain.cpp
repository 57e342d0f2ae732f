#include "jmstate/domain.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

namespace jmstate {

TransitionTopology::TransitionTopology(int n_states, std::vector<Transition> allowed)
    : n_states_(n_states), allowed_(std::move(allowed)) {
  if (n_states_ < 1) throw ValidationError("topology needs at least one state");
  outgoing_.assign(n_states_, {});
  for (std::size_t i = 0; i < allowed_.size(); ++i) {
    const auto& tr = allowed_[i];
    if (tr.from < 0 || tr.from >= n_states_ || tr.to < 0 || tr.to >= n_states_)
      throw ValidationError("transition " + std::to_string(tr.from) + "->" +
                            std::to_string(tr.to) + " references an unknown state");
    if (tr.from == tr.to)
      throw ValidationError("self transition " + std::to_string(tr.from) + "->" +
                            std::to_string(tr.to) + " is not allowed");
    for (std::size_t j = 0; j < i; ++j)
      if (allowed_[j].from == tr.from && allowed_[j].to == tr.to)
        throw ValidationError("duplicate transition " + label(static_cast<int>(i)));
    outgoing_[tr.from].push_back(static_cast<int>(i));
  }
}

TransitionTopology TransitionTopology::illness_death() {
  return TransitionTopology(3, {{0, 1}, {0, 2}, {1, 2}});
}

std::optional<int> TransitionTopology::index_of(int from, int to) const {
  if (from < 0 || from >= n_states_) return std::nullopt;
  for (int idx : outgoing_[from])
    if (allowed_[idx].to == to) return idx;
  return std::nullopt;
}

std::vector<int> TransitionTopology::absorbing_states() const {
  std::vector<int> out;
  for (int h = 0; h < n_states_; ++h)
    if (is_absorbing(h)) out.push_back(h);
  return out;
}

std::string TransitionTopology::label(int index) const {
  const auto& tr = allowed_.at(index);
  return std::to_string(tr.from) + "->" + std::to_string(tr.to);
}

int TransitionTopology::parse_label(const std::string& text) const {
  auto pos = text.find("->");
  if (pos == std::string::npos) {
    // bare 1-based index
    try {
      std::size_t used = 0;
      int idx = std::stoi(text, &used);
      if (used == text.size() && idx >= 1 && idx <= n_transitions()) return idx - 1;
    } catch (const std::exception&) {
    }
    throw ValidationError("cannot parse transition '" + text + "'");
  }
  try {
    int from = std::stoi(text.substr(0, pos));
    int to = std::stoi(text.substr(pos + 2));
    if (auto idx = index_of(from, to)) return *idx;
  } catch (const std::invalid_argument&) {
  }
  throw ValidationError("transition '" + text + "' is not allowed by the topology");
}

int JointDataset::covariate_index(const std::string& name) const {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) throw ValidationError("unknown covariate column '" + name + "'");
  return static_cast<int>(it - covariate_names.begin());
}

std::size_t JointDataset::n_observations() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.y.size();
  return n;
}

std::vector<int> transition_indicators(int initial_state, const std::vector<int>& states) {
  std::vector<int> delta(states.size());
  int prev = initial_state;
  for (std::size_t r = 0; r < states.size(); ++r) {
    delta[r] = states[r] != prev ? 1 : 0;
    prev = states[r];
  }
  return delta;
}

namespace {

std::string where(const std::string& id, int line) {
  std::string s = "subject '" + id + "'";
  if (line > 0) s += " (line " + std::to_string(line) + ")";
  return s;
}

void check_history(const SubjectHistory& h, const TransitionTopology& topology) {
  const auto ctx = "subject '" + h.id + "'";
  if (h.initial_state < 0 || h.initial_state >= topology.n_states())
    throw ValidationError(ctx + ": unknown initial state " + std::to_string(h.initial_state));
  if (h.times.empty()) throw ValidationError(ctx + ": no follow-up after entry");
  if (h.times.size() != h.states.size() || h.delta.size() != h.times.size())
    throw ValidationError(ctx + ": inconsistent history vectors");
  if (!(h.t_entry < h.times.front()))
    throw ValidationError(ctx + ": entry time must precede the first event time");
  for (std::size_t r = 1; r < h.times.size(); ++r)
    if (!(h.times[r - 1] < h.times[r]))
      throw ValidationError(ctx + ": non-increasing times in history");
  const auto expected = transition_indicators(h.initial_state, h.states);
  int prev = h.initial_state;
  for (std::size_t r = 0; r < h.times.size(); ++r) {
    const int s = h.states[r];
    if (s < 0 || s >= topology.n_states())
      throw ValidationError(ctx + ": unknown state " + std::to_string(s));
    if (h.delta[r] != expected[r]) throw ValidationError(ctx + ": delta disagrees with states");
    if (expected[r] == 1) {
      if (!topology.index_of(prev, s))
        throw ValidationError(ctx + ": transition not allowed " + std::to_string(prev) + "->" +
                              std::to_string(s));
    } else if (r + 1 != h.times.size()) {
      throw ValidationError(ctx + ": repeated state before the end of follow-up");
    }
    if (r > 0 && topology.is_absorbing(prev))
      throw ValidationError(ctx + ": events after absorption");
    prev = s;
  }
  const bool absorbed = topology.is_absorbing(h.final_state()) && h.delta.back() == 1;
  if (!absorbed) {
    if (h.delta.back() != 0 && !topology.is_absorbing(h.final_state()))
      throw ValidationError(ctx + ": history must end with a censoring row");
    if (!h.censor_time || *h.censor_time != h.times.back())
      throw ValidationError(ctx + ": censoring time must equal the last time");
  }
}

}  // namespace

std::vector<SubjectHistory> histories_from_events(const std::vector<HistoryEvent>& events,
                                                  const TransitionTopology& topology) {
  std::vector<SubjectHistory> out;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<const HistoryEvent*>> grouped;
  for (const auto& e : events) {
    auto [it, inserted] = slot.try_emplace(e.id, grouped.size());
    if (inserted) grouped.emplace_back();
    grouped[it->second].push_back(&e);
  }
  out.reserve(grouped.size());
  for (const auto& rows : grouped) {
    const auto& first = *rows.front();
    SubjectHistory h;
    h.id = first.id;
    h.t_entry = first.time;
    h.initial_state = first.state;
    if (rows.size() < 2)
      throw ValidationError(where(first.id, first.line) + ": history needs an entry row and at least one more row");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (!(rows[r]->time > rows[r - 1]->time))
        throw ValidationError(where(first.id, rows[r]->line) + ": non-increasing times in history");
      h.times.push_back(rows[r]->time);
      h.states.push_back(rows[r]->state);
    }
    h.delta = transition_indicators(h.initial_state, h.states);
    const int last = h.states.back();
    if (h.delta.back() == 0 || !(last >= 0 && last < topology.n_states() && topology.is_absorbing(last)))
      h.censor_time = h.times.back();
    check_history(h, topology);
    out.push_back(std::move(h));
  }
  return out;
}

JointDataset validate_dataset(const LongitudinalTable& longitudinal,
                              const std::vector<SubjectHistory>& histories,
                              const TransitionTopology& topology,
                              const std::vector<std::string>& required_covariates) {
  JointDataset ds;
  ds.covariate_names = longitudinal.covariate_names;
  std::vector<int> required;
  for (const auto& name : required_covariates) required.push_back(ds.covariate_index(name));

  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& h : histories) {
    check_history(h, topology);
    if (!slot.try_emplace(h.id, ds.subjects.size()).second)
      throw ValidationError("subject '" + h.id + "' has more than one history");
    SubjectData s;
    s.id = h.id;
    s.history = h;
    ds.subjects.push_back(std::move(s));
  }

  std::vector<char> seen(ds.subjects.size(), 0);
  for (const auto& rec : longitudinal.rows) {
    auto it = slot.find(rec.id);
    if (it == slot.end())
      throw ValidationError(where(rec.id, rec.line) + ": longitudinal record without event history");
    auto& s = ds.subjects[it->second];
    if (rec.covariates.size() != ds.covariate_names.size())
      throw ValidationError(where(rec.id, rec.line) + ": wrong number of covariate values");
    if (!s.times.empty() && rec.t < s.times.back())
      throw ValidationError(where(rec.id, rec.line) + ": non-increasing measurement times");
    if (rec.t > s.history.last_time())
      throw ValidationError(where(rec.id, rec.line) + ": longitudinal time after last event time");
    if (rec.t < s.history.t_entry)
      throw ValidationError(where(rec.id, rec.line) + ": longitudinal time before entry");
    if (!seen[it->second]) {
      s.covariates = rec.covariates;
      seen[it->second] = 1;
    } else {
      for (int c : required)
        if (rec.covariates[c] != s.covariates[c])
          throw ValidationError(where(rec.id, rec.line) + ": covariate '" + ds.covariate_names[c] +
                                "' varies within subject");
    }
    s.times.push_back(rec.t);
    s.y.push_back(rec.y);
  }
  for (std::size_t i = 0; i < ds.subjects.size(); ++i)
    if (!seen[i])
      throw ValidationError("subject '" + ds.subjects[i].id + "' has no longitudinal record");
  return ds;
}

JointDataset validate_dataset(const JointDataset& dataset, const TransitionTopology& topology) {
  std::unordered_map<std::string, int> ids;
  for (const auto& s : dataset.subjects) {
    if (!ids.emplace(s.id, 0).second) throw ValidationError("duplicate subject '" + s.id + "'");
    if (s.id != s.history.id) throw ValidationError("subject '" + s.id + "': id mismatch");
    check_history(s.history, topology);
    if (s.times.empty()) throw ValidationError("subject '" + s.id + "' has no longitudinal record");
    if (s.times.size() != s.y.size())
      throw ValidationError("subject '" + s.id + "': times and values differ in length");
    if (s.covariates.size() != dataset.covariate_names.size())
      throw ValidationError("subject '" + s.id + "': wrong number of covariate values");
    for (std::size_t j = 0; j < s.times.size(); ++j) {
      if (j > 0 && s.times[j] < s.times[j - 1])
        throw ValidationError("subject '" + s.id + "': non-increasing measurement times");
      if (s.times[j] > s.history.last_time())
        throw ValidationError("subject '" + s.id + "': longitudinal time after last event time");
    }
  }
  return dataset;
}

}  // namespace jmstate
