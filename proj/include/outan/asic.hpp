#pragma once

// Behavioral model of the 32-channel current-source ASIC and its headstage
// power periphery.
//
// Channel registers hold their last latched code (zero-order hold). The ideal
// code-to-current transfer is linear, full scale 1 mA at code 1024; the same
// value is reproduced through the internal R-2R / OTA / 1:64-mirror
// bookkeeping as a consistency check. Outputs resolve against a μLED load
// under the 4.6 V compliance limit, with a three-region output-voltage clamp
// window selected by code. Power sequencing is order-sensitive: raising the
// high or negative rail before both 1.2 V rails permanently faults the chip.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outan/common.hpp"
#include "outan/microled.hpp"
#include "outan/probe.hpp"
#include "outan/protocol.hpp"
#include "outan/rng.hpp"

namespace outan {

inline constexpr double kIdlePowerMw = 84.0;        // whole headstage, no stimulation
inline constexpr double kStimPowerMwPerMa = 6.95;   // extra per mA of output
inline constexpr double kAsicIdleSimPowerMw = 16.0; // ASIC alone, simulated figure
inline constexpr double kDacFullScaleV = 0.38;      // R-2R output at code 1024
inline constexpr double kMirrorRatio = 64.0;
inline constexpr double kMirrorBiasA = 1e-6;        // keeps the feedback FET conducting

enum class PowerState { off, analog_on, digital_on, fully_on, faulted };

inline const char* to_string(PowerState s) {
  switch (s) {
    case PowerState::off: return "off";
    case PowerState::analog_on: return "analog_on";
    case PowerState::digital_on: return "digital_on";
    case PowerState::fully_on: return "fully_on";
    case PowerState::faulted: return "faulted";
  }
  return "?";
}

inline PowerState power_state_from_string(std::string_view s) {
  if (s == "off") return PowerState::off;
  if (s == "analog_on") return PowerState::analog_on;
  if (s == "digital_on") return PowerState::digital_on;
  if (s == "fully_on") return PowerState::fully_on;
  if (s == "faulted") return PowerState::faulted;
  throw ValidationError("unknown power state: '" + std::string(s) + "'");
}

enum class Rail { analog_1v2 = 0, digital_1v2 = 1, negative_1v2 = 2, high_5v = 3 };

struct PowerEvent {
  Rail rail = Rail::analog_1v2;
  bool on = false;
  double time_us = 0;
};

struct ClampRegion {
  int code_lo = 0;
  int code_hi = 0;
  double v_min = 0;
  double v_max = 0;
};

struct ChannelState {
  int latched_code = 0;
  double commanded_a = 0;
  double actual_a = 0;
  double output_v = 0;
  bool in_region = true;
};

struct AsicState {
  std::array<ChannelState, kChannelCount> channels{};
  std::array<bool, 4> rails{};  // indexed by Rail
  PowerState power = PowerState::off;

  double v_compliance = 4.6;
  double full_scale_a = 1e-3;
  // The published endpoints pin only code 0 (valid below 2.5 V) and full
  // scale (valid up to 5 V); the interior boundaries are configurable.
  std::array<ClampRegion, 3> clamp_regions{{{1, 341, 0.0, 2.5},
                                            {342, 682, 1.5, 3.75},
                                            {683, 1023, 2.5, 5.0}}};
  double crosstalk_gain = 1.0 / 417.0;
  // Observation noise: multiplicative CV plus an absolute floor. The floor is
  // what pushes SD/mean above 0.1 % for the low-code commands.
  double noise_cv = 5e-4;
  double noise_floor_a = 5e-8;
  double power_noise_floor_uw = 2e-3;
  std::array<double, kChannelCount> channel_gain = [] {
    std::array<double, kChannelCount> g{};
    g.fill(1.0);
    return g;
  }();
  double hold_capacitor_window_us = 10000.0;  // input hold after a disconnect
  double power_down_sequence_us = 5000.0;     // time the sequencer needs to wind down

  bool fully_on() const { return power == PowerState::fully_on; }
  bool faulted() const { return power == PowerState::faulted; }
};

namespace detail {

inline PowerState derive_power_state(const std::array<bool, 4>& rails) {
  bool analog = rails[size_t(Rail::analog_1v2)];
  bool digital = rails[size_t(Rail::digital_1v2)];
  bool negative = rails[size_t(Rail::negative_1v2)];
  bool high = rails[size_t(Rail::high_5v)];
  if (analog && digital && negative && high) return PowerState::fully_on;
  if (analog && digital) return PowerState::digital_on;
  if (analog) return PowerState::analog_on;
  return PowerState::off;
}

}  // namespace detail

// Ideal DAC + output-stage transfer: code/1024 of full scale.
inline double ideal_current_a(const AsicState& state, int code) {
  if (state.faulted()) throw StateError("asic is faulted");
  if (!state.fully_on()) throw StateError("asic is not fully powered");
  if (code < 0 || code >= kCodeLevels) throw ValidationError("code out of range");
  return state.full_scale_a * double(code) / double(kCodeLevels);
}

// Same current computed the way the silicon does it: the R-2R voltage drives
// the OTA feedback resistor, a 1 uA bias is added on the mirror input and
// 64 uA subtracted from the mirror output. Algebraically equal to the ideal
// transfer; kept as a separate route so tests can assert the identity.
inline double mirror_current_a(const AsicState& state, int code) {
  if (!state.fully_on()) throw StateError("asic is not fully powered");
  if (code < 0 || code >= kCodeLevels) throw ValidationError("code out of range");
  const double r_fb = kMirrorRatio * kDacFullScaleV / state.full_scale_a;
  const double v_in = kDacFullScaleV * double(code) / double(kCodeLevels);
  const double mirror_input = v_in / r_fb + kMirrorBiasA;
  return kMirrorRatio * mirror_input - kMirrorRatio * kMirrorBiasA;
}

// Latches the addressed channel's code at CE rise; every other channel holds.
inline AsicState apply_frame(AsicState state, Frame frame) {
  if (state.faulted()) throw StateError("asic is faulted; frame rejected");
  if (!state.fully_on()) throw StateError("asic is not fully powered; frame rejected");
  Command cmd = decode_frame(frame);
  state.channels[cmd.address].latched_code = cmd.value;
  return state;
}

inline bool region_check(const AsicState& state, int code, double v_out) {
  if (code < 0 || code >= kCodeLevels) throw ValidationError("code out of range");
  for (const ClampRegion& r : state.clamp_regions) {
    // Code 0 shares the lowest region's window.
    bool contains = (code >= r.code_lo && code <= r.code_hi) || (code == 0 && r.code_lo <= 1);
    if (contains) return v_out >= r.v_min && v_out <= r.v_max;
  }
  return false;
}

struct ResolvedOutput {
  double commanded_a = 0;
  double actual_a = 0;
  double output_v = 0;
  bool in_region = true;
};

// Resolves one channel against its load. Compliance can only reduce the
// output: if the load would need more than v_compliance, the source saturates
// at led_current(load, v_compliance).
inline ResolvedOutput resolve_output(const AsicState& state, int channel,
                                     const MicroLedModel& load) {
  if (!state.fully_on()) throw StateError("asic is not fully powered");
  if (channel < 0 || channel >= kChannelCount) throw ValidationError("channel out of range");
  const int code = state.channels[size_t(channel)].latched_code;
  ResolvedOutput out;
  out.commanded_a = state.channel_gain[size_t(channel)] * ideal_current_a(state, code);

  switch (load.state) {
    case LedState::open_circuit:
      out.actual_a = 0;
      out.output_v = state.v_compliance;
      out.in_region = false;
      return out;
    case LedState::short_circuit:
      out.actual_a = out.commanded_a;
      out.output_v = 0;
      out.in_region = region_check(state, code, out.output_v);
      return out;
    case LedState::ok:
      break;
  }

  double v_needed = led_voltage(load, out.commanded_a);
  if (v_needed <= state.v_compliance) {
    out.actual_a = out.commanded_a;
    out.output_v = v_needed;
  } else {
    out.actual_a = led_current(load, state.v_compliance);
    out.output_v = state.v_compliance;
  }
  out.in_region = region_check(state, code, out.output_v);
  return out;
}

// No load bound to the channel behaves as an open output.
inline ResolvedOutput resolve_output(const AsicState& state, int channel,
                                     const ProbeModel& probe) {
  if (probe.connected(channel)) return resolve_output(state, channel, probe.led_for_channel(channel));
  ResolvedOutput out;
  out.commanded_a = state.channel_gain[size_t(channel)] *
                    ideal_current_a(state, state.channels[size_t(channel)].latched_code);
  out.actual_a = 0;
  out.output_v = state.v_compliance;
  out.in_region = false;
  return out;
}

inline AsicState update_channel_outputs(AsicState state, const ProbeModel& probe) {
  for (int ch = 0; ch < kChannelCount; ++ch) {
    ResolvedOutput out = resolve_output(state, ch, probe);
    auto& cs = state.channels[size_t(ch)];
    cs.commanded_a = out.commanded_a;
    cs.actual_a = out.actual_a;
    cs.output_v = out.output_v;
    cs.in_region = out.in_region;
  }
  return state;
}

// Knee of the compliance-limited transfer: the last code whose commanded
// current the load accepts without saturating. Codes above it resolve to
// led_current(load, v_compliance) regardless of the command.
inline int saturation_onset_code(const AsicState& state, int channel, const MicroLedModel& load) {
  if (load.state != LedState::ok) throw ValidationError("onset undefined for failed load");
  const double gain = state.channel_gain[size_t(channel)];
  auto within = [&](int code) {
    double i = gain * state.full_scale_a * double(code) / double(kCodeLevels);
    return led_voltage(load, i) <= state.v_compliance;
  };
  if (!within(1)) return 0;
  int lo = 1, hi = kCodeLevels - 1;
  if (within(hi)) return hi;
  while (hi - lo > 1) {
    int mid = (lo + hi) / 2;
    (within(mid) ? lo : hi) = mid;
  }
  return lo;
}

// Static linear coupling from probe-adjacent aggressors into the victim.
inline double crosstalk_current_a(const AsicState& state, const ProbeModel& probe, int victim) {
  if (!state.fully_on()) throw StateError("asic is not fully powered");
  double sum = 0;
  for (int ch = 0; ch < kChannelCount; ++ch) {
    if (ch == victim || !probe_adjacent(probe, victim, ch)) continue;
    sum += resolve_output(state, ch, probe).actual_a;
  }
  return state.crosstalk_gain * sum;
}

// Applies supply events in time order. Dangerous at any instant: negative or
// high rail up while the two 1.2 V rails are not both up. The fault is
// absorbing; only constructing a fresh state clears it.
inline AsicState power_transition(AsicState state, std::span<const PowerEvent> events) {
  std::vector<PowerEvent> ordered(events.begin(), events.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PowerEvent& a, const PowerEvent& b) { return a.time_us < b.time_us; });
  for (const PowerEvent& ev : ordered) {
    if (state.faulted()) return state;
    state.rails[size_t(ev.rail)] = ev.on;
    bool analog = state.rails[size_t(Rail::analog_1v2)];
    bool digital = state.rails[size_t(Rail::digital_1v2)];
    bool negative = state.rails[size_t(Rail::negative_1v2)];
    bool high = state.rails[size_t(Rail::high_5v)];
    if ((negative || high) && !(analog && digital)) {
      state.power = PowerState::faulted;
      for (auto& ch : state.channels) ch = ChannelState{};
      return state;
    }
    state.power = detail::derive_power_state(state.rails);
    if (!state.fully_on())
      for (auto& ch : state.channels) ch = ChannelState{};
  }
  return state;
}

inline AsicState power_on(AsicState state) {
  const PowerEvent up[] = {{Rail::analog_1v2, true, 0},
                           {Rail::digital_1v2, true, 10},
                           {Rail::negative_1v2, true, 20},
                           {Rail::high_5v, true, 20}};
  return power_transition(std::move(state), up);
}

inline AsicState power_off(AsicState state) {
  const PowerEvent down[] = {{Rail::high_5v, false, 0},
                             {Rail::negative_1v2, false, 0},
                             {Rail::digital_1v2, false, 10},
                             {Rail::analog_1v2, false, 20}};
  return power_transition(std::move(state), down);
}

inline AsicState powered_on_asic() { return power_on(AsicState{}); }

// Input power lost: the hold capacitor must carry the supply long enough for
// the sequencing IC to run the full power-down, otherwise the rails collapse
// out of order and the chip is damaged.
inline AsicState sudden_disconnect(AsicState state) {
  if (state.faulted()) return state;
  if (state.power_down_sequence_us <= state.hold_capacitor_window_us) return power_off(std::move(state));
  state.power = PowerState::faulted;
  for (auto& ch : state.channels) ch = ChannelState{};
  return state;
}

// Whole-headstage consumption: idle floor plus the per-mA stimulation cost.
inline double power_consumption_mw(const AsicState& state, const ProbeModel& probe) {
  if (!state.fully_on()) return 0.0;
  double total_ma = 0;
  for (int ch = 0; ch < kChannelCount; ++ch)
    total_ma += resolve_output(state, ch, probe).actual_a * 1e3;
  return kIdlePowerMw + kStimPowerMwPerMa * total_ma;
}

// --- observation noise (applied at measurement time, never to state) -------

inline double observe_current_a(Rng& rng, const AsicState& state, double true_a) {
  return true_a * (1.0 + state.noise_cv * rng.normal()) + state.noise_floor_a * rng.normal();
}

inline double observe_power_uw(Rng& rng, const AsicState& state, double true_uw) {
  return true_uw * (1.0 + state.noise_cv * rng.normal()) + state.power_noise_floor_uw * rng.normal();
}

// --- snapshot ---------------------------------------------------------------

inline nlohmann::json asic_snapshot_json(const AsicState& state, const ProbeModel* probe = nullptr) {
  nlohmann::json j;
  j["power"] = to_string(state.power);
  j["rails"] = {{"analog_1v2", state.rails[0]},
                {"digital_1v2", state.rails[1]},
                {"negative_1v2", state.rails[2]},
                {"high_5v", state.rails[3]}};
  auto& codes = j["latched_codes"] = nlohmann::json::array();
  for (const auto& ch : state.channels) codes.push_back(ch.latched_code);
  if (probe != nullptr && state.fully_on()) {
    auto& outs = j["outputs"] = nlohmann::json::array();
    for (int ch = 0; ch < kChannelCount; ++ch) {
      ResolvedOutput out = resolve_output(state, ch, *probe);
      outs.push_back({{"channel", ch},
                      {"commanded_a", out.commanded_a},
                      {"actual_a", out.actual_a},
                      {"output_v", out.output_v},
                      {"in_region", out.in_region}});
    }
    j["power_consumption_mw"] = power_consumption_mw(state, *probe);
  }
  return j;
}

inline AsicState asic_from_snapshot_json(const nlohmann::json& j) {
  AsicState state;
  state.power = power_state_from_string(j.at("power").get<std::string>());
  if (j.contains("rails")) {
    state.rails[0] = j["rails"].value("analog_1v2", false);
    state.rails[1] = j["rails"].value("digital_1v2", false);
    state.rails[2] = j["rails"].value("negative_1v2", false);
    state.rails[3] = j["rails"].value("high_5v", false);
  } else if (state.fully_on()) {
    state.rails.fill(true);
  }
  const auto& codes = j.at("latched_codes");
  if (codes.size() != kChannelCount) throw ValidationError("snapshot needs 32 latched codes");
  for (int ch = 0; ch < kChannelCount; ++ch) {
    int code = codes[size_t(ch)].get<int>();
    if (code < 0 || code >= kCodeLevels) throw ValidationError("snapshot code out of range");
    state.channels[size_t(ch)].latched_code = code;
  }
  return state;
}

}  // namespace outan
