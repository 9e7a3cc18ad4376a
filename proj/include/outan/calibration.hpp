#pragma once

// Digital calibration: measured I-P curves, the 1024 x 32 power-to-code
// table, and DNL/INL linearity reports.
//
// The table maps a desired optical power grid (1024 linear rows, LSB =
// target/1024) to the DAC command whose measured output was closest. All
// channels are calibrated to the maximum output of the weakest live channel,
// rounded down to a configurable granularity, so no channel is ever asked to
// exceed its own compliance-limited maximum. Calibration prevents saturation;
// it cannot undo it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "outan/asic.hpp"
#include "outan/probe.hpp"

namespace outan {

inline constexpr int kTableRows = 1024;
// Below this, a channel's whole sweep is considered optically dead.
inline constexpr double kDeadPowerThresholdUw = 0.05;

struct CalibrationTable {
  double target_max_power_uw = 0;
  double lsb_uw = 0;  // target_max_power_uw / 1024 exactly
  std::vector<std::array<uint16_t, kChannelCount>> rows;  // [row][channel]
  std::array<bool, kChannelCount> live{};
  std::array<bool, kChannelCount> dead{};

  double desired_uw(int row) const { return double(row) * lsb_uw; }
};

// Sweeps every code on every connected channel, `reps` noisy observations
// each, and records mean and CV of current and optical power.
inline std::vector<IPCurve> measure_ip_curves(const AsicState& asic, const ProbeModel& probe,
                                              int reps, uint64_t seed) {
  if (asic.faulted()) throw StateError("asic is faulted; cannot measure");
  if (!asic.fully_on()) throw StateError("asic is not fully powered");
  if (reps < 1) throw ValidationError("reps must be >= 1");

  std::vector<IPCurve> curves;
  for (int ch : probe.connected_channels()) {
    Rng rng = Rng::substream(seed, "measure", uint64_t(ch));
    const MicroLedModel& load = probe.led_for_channel(ch);
    IPCurve curve;
    curve.channel = ch;
    curve.reps = reps;
    curve.samples.reserve(kCodeLevels);
    AsicState state = asic;
    for (int code = 0; code < kCodeLevels; ++code) {
      state = apply_frame(state, encode_command({uint8_t(ch), uint16_t(code)}));
      ResolvedOutput out = resolve_output(state, ch, load);
      const double true_p = led_power_uw(load, out.actual_a);

      const size_t n_obs = static_cast<size_t>(reps);
      std::vector<std::array<double, 2>> obs(n_obs);
      for (auto& o : obs) {
        o[0] = observe_current_a(rng, state, out.actual_a);
        o[1] = observe_power_uw(rng, state, true_p);
      }
      // Two-pass moments on data shifted by the first observation; exact
      // zeros when every repetition is identical.
      std::array<double, 2> mean{}, shifted_mean{}, ssd{};
      for (int d = 0; d < 2; ++d) {
        for (const auto& o : obs) shifted_mean[size_t(d)] += o[size_t(d)] - obs[0][size_t(d)];
        shifted_mean[size_t(d)] /= reps;
        for (const auto& o : obs) {
          double dev = (o[size_t(d)] - obs[0][size_t(d)]) - shifted_mean[size_t(d)];
          ssd[size_t(d)] += dev * dev;
        }
        mean[size_t(d)] = obs[0][size_t(d)] + shifted_mean[size_t(d)];
      }
      IpSample s;
      s.code = code;
      s.current_a = mean[0];
      s.power_uw = mean[1];
      if (reps > 1) {
        double sd_i = std::sqrt(ssd[0] / (reps - 1));
        double sd_p = std::sqrt(ssd[1] / (reps - 1));
        s.current_cv = s.current_a != 0 ? sd_i / std::abs(s.current_a) : 0.0;
        s.power_cv = s.power_uw != 0 ? sd_p / std::abs(s.power_uw) : 0.0;
      }
      curve.samples.push_back(s);
    }
    curve.dead = curve.max_power_uw() < kDeadPowerThresholdUw;
    curves.push_back(std::move(curve));
  }
  return curves;
}

// Builds the table from measured curves. target = weakest live maximum,
// floored to `granularity_uw`; each entry is the code whose measured power is
// nearest the row's desired value, ties broken toward the lower code. Dead
// channels get code 0 and a flag so one burnt μLED cannot block a probe.
inline CalibrationTable build_table(std::span<const IPCurve> curves, double granularity_uw = 1.0) {
  if (!(granularity_uw > 0)) throw ValidationError("granularity must be positive");
  double weakest = std::numeric_limits<double>::infinity();
  int live_count = 0;
  for (const IPCurve& c : curves) {
    if (c.dead) continue;
    ++live_count;
    weakest = std::min(weakest, c.max_power_uw());
  }
  if (live_count == 0) throw ValidationError("all channels dead; nothing to calibrate");

  CalibrationTable table;
  table.target_max_power_uw = std::floor(weakest / granularity_uw) * granularity_uw;
  if (!(table.target_max_power_uw > 0))
    throw ValidationError("weakest channel maximum is below one granularity step");
  table.lsb_uw = table.target_max_power_uw / double(kTableRows);
  table.rows.assign(kTableRows, {});

  for (const IPCurve& c : curves) {
    if (c.dead) {
      table.dead[size_t(c.channel)] = true;
      continue;
    }
    table.live[size_t(c.channel)] = true;
    uint16_t floor_code = 0;
    for (int row = 0; row < kTableRows; ++row) {
      const double desired = table.desired_uw(row);
      double best_err = std::numeric_limits<double>::infinity();
      uint16_t best_code = 0;
      for (const IpSample& s : c.samples) {
        double err = std::abs(s.power_uw - desired);
        if (err < best_err) {  // strict: ties keep the earlier (lower) code
          best_err = err;
          best_code = uint16_t(s.code);
        }
      }
      // Hardware safety: columns must never step backwards.
      floor_code = std::max(floor_code, best_code);
      table.rows[size_t(row)][size_t(c.channel)] = floor_code;
    }
  }
  return table;
}

// Nearest desired-power row; exact midpoints round toward the lower row.
inline int lookup_row(const CalibrationTable& table, double desired_uw) {
  if (desired_uw < 0 || desired_uw > table.target_max_power_uw)
    throw ValidationError("desired power outside the calibrated range");
  int row = int(std::ceil(desired_uw / table.lsb_uw - 0.5));
  return std::clamp(row, 0, kTableRows - 1);
}

inline uint16_t lookup(const CalibrationTable& table, int channel, double desired_uw) {
  if (channel < 0 || channel >= kChannelCount) throw ValidationError("channel out of range");
  if (!table.live[size_t(channel)] && !table.dead[size_t(channel)])
    throw ValidationError("channel was not calibrated: " + std::to_string(channel));
  return table.rows[size_t(lookup_row(table, desired_uw))][size_t(channel)];
}

enum class CalibrationPhase { pre, post };

struct LinearityReport {
  int channel = 0;
  CalibrationPhase phase = CalibrationPhase::pre;
  std::vector<double> dnl;  // length n-1, LSB units
  std::vector<double> inl;  // length n, LSB units
};

// dnl[k] = (P[k+1]-P[k])/lsb - 1, inl[k] = (P[k] - k*lsb)/lsb.
inline LinearityReport linearity(std::span<const double> response_uw, double lsb_uw,
                                 int channel = 0,
                                 CalibrationPhase phase = CalibrationPhase::pre) {
  if (response_uw.size() < 2) throw ValidationError("linearity needs at least 2 samples");
  if (!(lsb_uw > 0)) throw ValidationError("lsb must be positive");
  LinearityReport report;
  report.channel = channel;
  report.phase = phase;
  report.inl.reserve(response_uw.size());
  report.dnl.reserve(response_uw.size() - 1);
  for (size_t k = 0; k < response_uw.size(); ++k) {
    report.inl.push_back((response_uw[k] - double(k) * lsb_uw) / lsb_uw);
    if (k + 1 < response_uw.size())
      report.dnl.push_back((response_uw[k + 1] - response_uw[k]) / lsb_uw - 1.0);
  }
  return report;
}

// --- table file: header line, then 1024 rows of 32 code columns ------------

inline std::string table_to_csv(const CalibrationTable& table) {
  std::string out = "target_max_power_uw," + format_double(table.target_max_power_uw) +
                    ",lsb_uw," + format_double(table.lsb_uw);
  auto list = [&](const std::array<bool, kChannelCount>& flags) {
    std::string s;
    for (int ch = 0; ch < kChannelCount; ++ch)
      if (flags[size_t(ch)]) {
        if (!s.empty()) s += ';';
        s += std::to_string(ch);
      }
    return s;
  };
  out += ",live," + list(table.live) + ",dead," + list(table.dead) + '\n';
  for (const auto& row : table.rows) {
    for (int ch = 0; ch < kChannelCount; ++ch) {
      if (ch) out += ',';
      out += std::to_string(row[size_t(ch)]);
    }
    out += '\n';
  }
  return out;
}

inline CalibrationTable table_from_csv(std::string_view text) {
  CalibrationTable table;
  size_t begin = 0;
  size_t line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    begin = end + 1;
    if (line.empty()) continue;
    ++line_no;
    auto fields = split_csv(line);
    if (line_no == 1) {
      for (size_t k = 0; k + 1 < fields.size(); k += 2) {
        std::string_view key = trim(fields[k]);
        std::string_view value = trim(fields[k + 1]);
        if (key == "target_max_power_uw") table.target_max_power_uw = parse_double(value);
        else if (key == "lsb_uw") table.lsb_uw = parse_double(value);
        else if (key == "live" || key == "dead") {
          auto& flags = key == "live" ? table.live : table.dead;
          size_t p = 0;
          while (p < value.size()) {
            size_t sep = value.find(';', p);
            if (sep == std::string_view::npos) sep = value.size();
            if (sep > p) flags[size_t(parse_long(value.substr(p, sep - p)))] = true;
            p = sep + 1;
          }
        }
      }
      if (!(table.lsb_uw > 0)) throw ValidationError("table header missing lsb");
      continue;
    }
    if (fields.size() != kChannelCount)
      throw ValidationError("table row " + std::to_string(line_no) + ": want 32 columns");
    std::array<uint16_t, kChannelCount> row{};
    for (int ch = 0; ch < kChannelCount; ++ch) {
      long code = parse_long(fields[size_t(ch)]);
      if (code < 0 || code >= kCodeLevels) throw ValidationError("table code out of range");
      row[size_t(ch)] = uint16_t(code);
    }
    table.rows.push_back(row);
  }
  if (table.rows.size() != kTableRows)
    throw ValidationError("table must have exactly 1024 rows, got " + std::to_string(table.rows.size()));
  return table;
}

inline std::string linearity_to_csv(std::span<const LinearityReport> reports) {
  std::string out = "channel,phase,k,dnl_lsb,inl_lsb\n";
  for (const auto& r : reports) {
    const char* phase = r.phase == CalibrationPhase::pre ? "pre" : "post";
    for (size_t k = 0; k < r.inl.size(); ++k) {
      out += std::to_string(r.channel);
      out += ',';
      out += phase;
      out += ',' + std::to_string(k) + ',';
      if (k < r.dnl.size()) out += format_double(r.dnl[k]);
      out += ',' + format_double(r.inl[k]) + '\n';
    }
  }
  return out;
}

}  // namespace outan
