#pragma once

// Stimulation scripts and their compilation into bandwidth-feasible command
// streams.
//
// The controller owns one serial link budget: one 16-bit frame per 6.25 us
// slot (160k commands/s). Overlapping events share the link by round-robin
// over the active channels in ascending order, so with N active channels each
// one is refreshed every N slots. Scripts whose active set would stretch any
// channel's refresh past 0.2 ms are rejected. Between updates a channel's
// output holds (zero-order hold), which the simulator reproduces against the
// ASIC and probe models.
//
// Waveforms are power-valued and start and end at zero where the hardware
// wants artifact-free edges: sinusoids as peak*(1-cos)/2, pulses flanked by
// half-sine ramps.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "outan/asic.hpp"
#include "outan/calibration.hpp"
#include "outan/probe.hpp"
#include "outan/protocol.hpp"

namespace outan {

inline constexpr double kSlotPeriodUs = 6.25;      // 160k commands per second
inline constexpr double kRefreshLimitUs = 200.0;   // 5 kHz per channel floor

struct ConstantWave {
  double power_uw = 0;
};

struct SinusoidWave {
  double freq_hz = 0;
  double peak_uw = 0;
};

struct FlankedPulseWave {
  double plateau_uw = 0;
  double plateau_ms = 0;
  double edge_half_sine_ms = 0;

  double duration_us() const { return (plateau_ms + 2.0 * edge_half_sine_ms) * 1e3; }
};

using Waveform = std::variant<ConstantWave, SinusoidWave, FlankedPulseWave>;

inline double waveform_peak_uw(const Waveform& wave) {
  return std::visit([](const auto& w) -> double {
    using T = std::decay_t<decltype(w)>;
    if constexpr (std::is_same_v<T, ConstantWave>) return w.power_uw;
    else if constexpr (std::is_same_v<T, SinusoidWave>) return w.peak_uw;
    else return w.plateau_uw;
  }, wave);
}

// Commanded power at time t since the start of the event. Continuous in t,
// zero at the edges for the shaped waveforms.
inline double waveform_sample_uw(const Waveform& wave, double t_us) {
  return std::visit([t_us](const auto& w) -> double {
    using T = std::decay_t<decltype(w)>;
    if constexpr (std::is_same_v<T, ConstantWave>) {
      return w.power_uw;
    } else if constexpr (std::is_same_v<T, SinusoidWave>) {
      return w.peak_uw * 0.5 * (1.0 - std::cos(2.0 * kPi * w.freq_hz * t_us * 1e-6));
    } else {
      const double edge_us = w.edge_half_sine_ms * 1e3;
      const double plateau_us = w.plateau_ms * 1e3;
      const double total_us = w.duration_us();
      if (t_us <= 0 || t_us >= total_us) return 0.0;
      if (t_us < edge_us)
        return w.plateau_uw * 0.5 * (1.0 - std::cos(kPi * t_us / edge_us));
      if (t_us <= edge_us + plateau_us) return w.plateau_uw;
      return w.plateau_uw * 0.5 * (1.0 - std::cos(kPi * (total_us - t_us) / edge_us));
    }
  }, wave);
}

struct StimEvent {
  int channel = 0;
  Waveform wave;
  double start_us = 0;
  double duration_us = 0;
};

struct StimScript {
  std::vector<StimEvent> events;
};

struct StreamItem {
  uint64_t slot = 0;
  uint16_t word = 0;

  friend bool operator==(const StreamItem&, const StreamItem&) = default;
};

struct CommandStream {
  double slot_period_us = kSlotPeriodUs;
  std::vector<StreamItem> items;  // strictly increasing slots, one per slot
};

namespace detail {

struct CompiledEvent {
  int channel = 0;
  const StimEvent* event = nullptr;
  uint64_t start_slot = 0;
  uint64_t end_slot = 0;  // half-open
};

}  // namespace detail

// Compiles a script against a calibration table. Each visit samples the
// channel's waveform at the visit slot, converts power to code through the
// table, and emits one frame; a channel leaving the active set gets one
// explicit code-0 frame before it drops out of the rotation.
inline CommandStream compile(const StimScript& script, const CalibrationTable& table,
                             double slot_period_us = kSlotPeriodUs,
                             double refresh_limit_us = kRefreshLimitUs) {
  if (!(slot_period_us > 0)) throw ValidationError("slot period must be positive");
  CommandStream stream;
  stream.slot_period_us = slot_period_us;
  if (script.events.empty()) return stream;

  std::vector<detail::CompiledEvent> events;
  for (const StimEvent& ev : script.events) {
    if (ev.channel < 0 || ev.channel >= kChannelCount)
      throw ValidationError("event channel out of range");
    if (!(ev.duration_us > 0)) throw ValidationError("event duration must be positive");
    if (ev.start_us < 0) throw ValidationError("event start must be >= 0");
    if (waveform_peak_uw(ev.wave) > table.target_max_power_uw + 1e-12)
      throw ValidationError("event power exceeds the calibrated range");
    if (const auto* fp = std::get_if<FlankedPulseWave>(&ev.wave)) {
      if (std::abs(fp->duration_us() - ev.duration_us) > 0.5 * slot_period_us)
        throw ValidationError("flanked pulse duration must equal plateau plus both edges");
    }
    detail::CompiledEvent ce;
    ce.channel = ev.channel;
    ce.event = &ev;
    ce.start_slot = uint64_t(std::llround(ev.start_us / slot_period_us));
    ce.end_slot = uint64_t(std::llround((ev.start_us + ev.duration_us) / slot_period_us));
    if (ce.end_slot <= ce.start_slot) throw ValidationError("event shorter than one slot");
    events.push_back(ce);
  }

  // Reject overlapping events on one channel.
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    return a.channel != b.channel ? a.channel < b.channel : a.start_slot < b.start_slot;
  });
  for (size_t k = 1; k < events.size(); ++k)
    if (events[k].channel == events[k - 1].channel &&
        events[k].start_slot < events[k - 1].end_slot)
      throw ValidationError("overlapping events on channel " + std::to_string(events[k].channel));

  std::set<uint64_t> boundary_set;
  for (const auto& ce : events) {
    boundary_set.insert(ce.start_slot);
    boundary_set.insert(ce.end_slot);
  }
  std::vector<uint64_t> boundaries(boundary_set.begin(), boundary_set.end());

  // Per-channel event list for quick "active during segment" lookup.
  std::array<std::vector<const detail::CompiledEvent*>, kChannelCount> by_channel;
  for (const auto& ce : events) by_channel[size_t(ce.channel)].push_back(&ce);

  std::vector<int> prev_active;
  std::vector<int> pending_off;  // channels owed an explicit zero frame
  uint64_t next_free_slot = 0;

  auto emit = [&](uint64_t slot, int channel, uint16_t code) {
    stream.items.push_back({slot, encode_command({uint8_t(channel), code}).word});
  };

  for (size_t b = 0; b + 1 <= boundaries.size(); ++b) {
    const uint64_t seg_begin = boundaries[b];
    const uint64_t seg_end = (b + 1 < boundaries.size()) ? boundaries[b + 1] : boundaries[b];

    // Active set for [seg_begin, seg_end).
    std::vector<int> active;
    std::array<const detail::CompiledEvent*, kChannelCount> covering{};
    for (int ch = 0; ch < kChannelCount; ++ch) {
      for (const auto* ce : by_channel[size_t(ch)]) {
        if (ce->start_slot <= seg_begin && seg_begin < ce->end_slot) {
          active.push_back(ch);
          covering[size_t(ch)] = ce;
          break;
        }
      }
    }

    if (double(active.size()) * slot_period_us > refresh_limit_us + 1e-9)
      throw ValidationError("infeasible bandwidth: " + std::to_string(active.size()) +
                            " active channels stretch the refresh period past " +
                            std::to_string(refresh_limit_us) + " us");

    // Channels that just left the active set owe a zero frame.
    for (int ch : prev_active)
      if (!std::binary_search(active.begin(), active.end(), ch)) pending_off.push_back(ch);
    std::sort(pending_off.begin(), pending_off.end());
    prev_active = active;

    uint64_t slot = std::max(seg_begin, next_free_slot);
    if (b + 1 == boundaries.size()) {
      // Final boundary: no more events, just drain the off queue.
      for (int ch : pending_off) emit(slot++, ch, 0);
      pending_off.clear();
      next_free_slot = slot;
      break;
    }
    if (active.empty() && pending_off.empty()) continue;

    size_t rotation = 0;
    for (; slot < seg_end; ++slot) {
      if (!pending_off.empty()) {
        emit(slot, pending_off.front(), 0);
        pending_off.erase(pending_off.begin());
        continue;
      }
      if (active.empty()) break;
      const int ch = active[rotation];
      rotation = (rotation + 1) % active.size();
      const auto* ce = covering[size_t(ch)];
      const double t_rel = double(slot) * slot_period_us - ce->event->start_us;
      double desired = std::max(0.0, waveform_sample_uw(ce->event->wave, t_rel));
      desired = std::min(desired, table.target_max_power_uw);
      emit(slot, ch, lookup(table, ch, desired));
    }
    next_free_slot = std::max(slot, seg_end);
  }
  return stream;
}

// --- simulation --------------------------------------------------------------

struct TracePoint {
  double t_us = 0;
  int code = 0;
  double current_a = 0;
  double power_uw = 0;
  double voltage_v = 0;
};

// Per-channel change points with hold semantics between them.
struct Trace {
  double slot_period_us = kSlotPeriodUs;
  double t_end_us = 0;
  std::array<std::vector<TracePoint>, kChannelCount> channels;

  const TracePoint* point_at(int channel, double t_us) const {
    const auto& pts = channels[size_t(channel)];
    auto it = std::upper_bound(pts.begin(), pts.end(), t_us,
                               [](double t, const TracePoint& p) { return t < p.t_us; });
    if (it == pts.begin()) return nullptr;
    return &*std::prev(it);
  }

  double power_at(int channel, double t_us) const {
    const TracePoint* p = point_at(channel, t_us);
    return p != nullptr ? p->power_uw : 0.0;
  }
};

struct SimResult {
  AsicState state;
  Trace trace;
};

// Applies the stream slot by slot. Every frame latches one channel and its
// resolved output is recorded as a trace change point; all other channels
// hold their previous values.
inline SimResult simulate(const CommandStream& stream, AsicState state, const ProbeModel& probe) {
  if (!state.fully_on()) throw StateError("asic is not fully powered");
  SimResult result;
  result.trace.slot_period_us = stream.slot_period_us;
  uint64_t prev_slot = 0;
  bool first = true;
  for (const StreamItem& item : stream.items) {
    if (!first && item.slot <= prev_slot)
      throw ValidationError("stream slots must be strictly increasing");
    prev_slot = item.slot;
    first = false;

    state = apply_frame(state, Frame{item.word});
    Command cmd = decode_frame(Frame{item.word});
    ResolvedOutput out = resolve_output(state, cmd.address, probe);
    auto& cs = state.channels[size_t(cmd.address)];
    cs.commanded_a = out.commanded_a;
    cs.actual_a = out.actual_a;
    cs.output_v = out.output_v;
    cs.in_region = out.in_region;

    TracePoint pt;
    pt.t_us = double(item.slot) * stream.slot_period_us;
    pt.code = cmd.value;
    pt.current_a = out.actual_a;
    pt.voltage_v = out.output_v;
    pt.power_uw = probe.connected(cmd.address)
                      ? led_power_uw(probe.led_for_channel(cmd.address), out.actual_a)
                      : 0.0;
    result.trace.channels[size_t(cmd.address)].push_back(pt);
  }
  result.trace.t_end_us = stream.items.empty() ? 0.0 : double(prev_slot + 1) * stream.slot_period_us;
  result.state = std::move(state);
  return result;
}

// --- sequence-induction scripts ----------------------------------------------

struct SequenceParams {
  std::vector<int> led_order;    // μLED ids, activation order
  double per_led_ms = 15.0;      // single sinusoid cycle per μLED, 15-20 ms
  double inter_trial_ms = 65.0;
  double peak_uw = 0.45;
  int n_trials = 1;
  uint64_t seed = 1;
};

struct SequenceMetadata {
  SequenceParams params;
  std::vector<int> channel_order;       // led_order mapped through the probe wiring
  std::vector<double> trial_start_ms;
  double active_ms = 0;                 // led_order.size() * per_led_ms
};

struct SequenceScript {
  StimScript script;
  SequenceMetadata meta;
};

// One trial = one single-cycle sinusoid per μLED, back to back in the given
// order; trials repeat after inter_trial_ms of darkness. The order is taken
// as given (callers permute it for a second sequence); the seed is carried in
// the metadata so downstream stages stay reproducible.
inline SequenceScript make_sequence_script(const SequenceParams& params, const ProbeModel& probe) {
  if (params.led_order.empty()) throw ValidationError("sequence needs at least one μLED");
  if (params.per_led_ms < 15.0 || params.per_led_ms > 20.0)
    throw ValidationError("per-LED sinusoid must be 15-20 ms");
  if (params.n_trials < 1) throw ValidationError("need at least one trial");

  SequenceScript out;
  out.meta.params = params;
  out.meta.active_ms = double(params.led_order.size()) * params.per_led_ms;
  for (int led : params.led_order) {
    auto ch = probe.channel_for_led(led);
    if (!ch.has_value()) throw ValidationError("μLED " + std::to_string(led) + " is not wired to a channel");
    out.meta.channel_order.push_back(*ch);
  }

  const double trial_period_ms = out.meta.active_ms + params.inter_trial_ms;
  const SinusoidWave wave{1000.0 / params.per_led_ms, params.peak_uw};
  for (int trial = 0; trial < params.n_trials; ++trial) {
    const double trial_start_ms = double(trial) * trial_period_ms;
    out.meta.trial_start_ms.push_back(trial_start_ms);
    for (size_t j = 0; j < out.meta.channel_order.size(); ++j) {
      StimEvent ev;
      ev.channel = out.meta.channel_order[j];
      ev.wave = wave;
      ev.start_us = (trial_start_ms + double(j) * params.per_led_ms) * 1e3;
      ev.duration_us = params.per_led_ms * 1e3;
      out.script.events.push_back(ev);
    }
  }
  return out;
}

// Commanded power of sequence slot j at time t since trial start.
inline double sequence_commanded_uw(const SequenceMetadata& meta, size_t slot_j, double t_ms) {
  const double slot_start = double(slot_j) * meta.params.per_led_ms;
  if (t_ms < slot_start || t_ms >= slot_start + meta.params.per_led_ms) return 0.0;
  const SinusoidWave wave{1000.0 / meta.params.per_led_ms, meta.params.peak_uw};
  return waveform_sample_uw(Waveform{wave}, (t_ms - slot_start) * 1e3);
}

// --- file formats -------------------------------------------------------------

inline nlohmann::json waveform_to_json(const Waveform& wave) {
  return std::visit([](const auto& w) -> nlohmann::json {
    using T = std::decay_t<decltype(w)>;
    if constexpr (std::is_same_v<T, ConstantWave>)
      return {{"type", "constant"}, {"power_uw", w.power_uw}};
    else if constexpr (std::is_same_v<T, SinusoidWave>)
      return {{"type", "sinusoid"}, {"freq_hz", w.freq_hz}, {"peak_uw", w.peak_uw}};
    else
      return {{"type", "flanked_pulse"}, {"plateau_uw", w.plateau_uw},
              {"plateau_ms", w.plateau_ms}, {"edge_half_sine_ms", w.edge_half_sine_ms}};
  }, wave);
}

inline Waveform waveform_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "constant") return ConstantWave{j.at("power_uw").get<double>()};
  if (type == "sinusoid")
    return SinusoidWave{j.at("freq_hz").get<double>(), j.at("peak_uw").get<double>()};
  if (type == "flanked_pulse")
    return FlankedPulseWave{j.at("plateau_uw").get<double>(), j.at("plateau_ms").get<double>(),
                            j.at("edge_half_sine_ms").get<double>()};
  throw ValidationError("unknown waveform type: '" + type + "'");
}

inline nlohmann::json script_to_json(const StimScript& script,
                                     const SequenceMetadata* meta = nullptr) {
  nlohmann::json j;
  auto& events = j["events"] = nlohmann::json::array();
  for (const StimEvent& ev : script.events)
    events.push_back({{"channel", ev.channel},
                      {"start_us", ev.start_us},
                      {"duration_us", ev.duration_us},
                      {"waveform", waveform_to_json(ev.wave)}});
  if (meta != nullptr) {
    j["sequence"] = {{"led_order", meta->params.led_order},
                     {"channel_order", meta->channel_order},
                     {"per_led_ms", meta->params.per_led_ms},
                     {"inter_trial_ms", meta->params.inter_trial_ms},
                     {"peak_uw", meta->params.peak_uw},
                     {"n_trials", meta->params.n_trials},
                     {"seed", meta->params.seed},
                     {"active_ms", meta->active_ms},
                     {"trial_start_ms", meta->trial_start_ms}};
  }
  return j;
}

inline StimScript script_from_json(const nlohmann::json& j) {
  StimScript script;
  for (const auto& item : j.at("events")) {
    StimEvent ev;
    ev.channel = item.at("channel").get<int>();
    ev.start_us = item.at("start_us").get<double>();
    ev.duration_us = item.at("duration_us").get<double>();
    ev.wave = waveform_from_json(item.at("waveform"));
    script.events.push_back(ev);
  }
  return script;
}

inline std::optional<SequenceMetadata> sequence_meta_from_json(const nlohmann::json& j) {
  if (!j.contains("sequence")) return std::nullopt;
  const auto& s = j["sequence"];
  SequenceMetadata meta;
  meta.params.led_order = s.at("led_order").get<std::vector<int>>();
  meta.params.per_led_ms = s.at("per_led_ms").get<double>();
  meta.params.inter_trial_ms = s.at("inter_trial_ms").get<double>();
  meta.params.peak_uw = s.at("peak_uw").get<double>();
  meta.params.n_trials = s.at("n_trials").get<int>();
  meta.params.seed = s.at("seed").get<uint64_t>();
  meta.channel_order = s.at("channel_order").get<std::vector<int>>();
  meta.trial_start_ms = s.at("trial_start_ms").get<std::vector<double>>();
  meta.active_ms = s.at("active_ms").get<double>();
  return meta;
}

inline std::string stream_to_csv(const CommandStream& stream) {
  std::string out = "slot,frame_hex\n";
  for (const StreamItem& item : stream.items)
    out += std::to_string(item.slot) + ',' + to_hex4(item.word) + '\n';
  return out;
}

inline CommandStream stream_from_csv(std::string_view text, double slot_period_us = kSlotPeriodUs) {
  CommandStream stream;
  stream.slot_period_us = slot_period_us;
  size_t begin = 0, line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    begin = end + 1;
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    auto f = split_csv(line);
    if (f.size() != 2) throw ValidationError("stream csv line " + std::to_string(line_no) + ": want 2 fields");
    stream.items.push_back({uint64_t(parse_long(f[0])), parse_hex4(trim(f[1]))});
  }
  return stream;
}

inline std::string trace_to_csv(const Trace& trace) {
  std::string out = "time_us,channel,code,current_a,power_uw,voltage_v\n";
  // Merge per-channel change points into one time-ordered listing.
  std::array<size_t, kChannelCount> cursor{};
  size_t total = 0;
  for (const auto& pts : trace.channels) total += pts.size();
  for (size_t emitted = 0; emitted < total; ++emitted) {
    int best = -1;
    for (int ch = 0; ch < kChannelCount; ++ch) {
      if (cursor[size_t(ch)] >= trace.channels[size_t(ch)].size()) continue;
      if (best < 0 || trace.channels[size_t(ch)][cursor[size_t(ch)]].t_us <
                          trace.channels[size_t(best)][cursor[size_t(best)]].t_us)
        best = ch;
    }
    const TracePoint& p = trace.channels[size_t(best)][cursor[size_t(best)]++];
    out += format_double(p.t_us) + ',' + std::to_string(best) + ',' + std::to_string(p.code) +
           ',' + format_double(p.current_a) + ',' + format_double(p.power_uw) + ',' +
           format_double(p.voltage_v) + '\n';
  }
  return out;
}

inline Trace trace_from_csv(std::string_view text, double slot_period_us = kSlotPeriodUs) {
  Trace trace;
  trace.slot_period_us = slot_period_us;
  size_t begin = 0, line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    begin = end + 1;
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    auto f = split_csv(line);
    if (f.size() != 6) throw ValidationError("trace csv line " + std::to_string(line_no) + ": want 6 fields");
    int ch = int(parse_long(f[1]));
    if (ch < 0 || ch >= kChannelCount) throw ValidationError("trace channel out of range");
    TracePoint p;
    p.t_us = parse_double(f[0]);
    p.code = int(parse_long(f[2]));
    p.current_a = parse_double(f[3]);
    p.power_uw = parse_double(f[4]);
    p.voltage_v = parse_double(f[5]);
    trace.channels[size_t(ch)].push_back(p);
    trace.t_end_us = std::max(trace.t_end_us, p.t_us + slot_period_us);
  }
  return trace;
}

}  // namespace outan
