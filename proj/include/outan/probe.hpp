#pragma once

// Multi-shank μLED probe: per-LED models, the channel-to-LED wiring, and the
// measured I-P curve record used by calibration.
//
// All cathodes share one ground net, so loads are sourced, never sunk; at most
// one μLED is bound to a channel at a time (multi-probe PCBs re-jumper the
// mapping rather than paralleling loads).

#include <array>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outan/common.hpp"
#include "outan/microled.hpp"
#include "outan/rng.hpp"

namespace outan {

struct ProbeVariability {
  double r_series_lo_ohm = 310.0;   // strong corner, compliance near 0.9 mA
  double r_series_hi_ohm = 640.0;   // weak corner, compliance near 0.6 mA
  double eta_lo_uw_per_ma = 19.0;
  double eta_hi_uw_per_ma = 21.0;
  int dead_code_lo = 5;             // optical dead zone expressed in DAC codes
  int dead_code_hi = 20;
};

struct ProbeModel {
  int shanks = 4;
  int leds_per_shank = 3;
  std::vector<MicroLedModel> leds;      // led id = index
  std::array<int, 32> channel_map{};    // ASIC channel -> led id, -1 if unconnected

  ProbeModel() { channel_map.fill(-1); }

  int led_count() const { return static_cast<int>(leds.size()); }

  bool connected(int channel) const {
    return channel >= 0 && channel < 32 && channel_map[size_t(channel)] >= 0;
  }

  const MicroLedModel& led_for_channel(int channel) const {
    if (!connected(channel)) throw ValidationError("channel has no μLED: " + std::to_string(channel));
    return leds[size_t(channel_map[size_t(channel)])];
  }

  std::vector<int> connected_channels() const {
    std::vector<int> out;
    for (int ch = 0; ch < 32; ++ch)
      if (connected(ch)) out.push_back(ch);
    return out;
  }

  std::optional<int> channel_for_led(int led_id) const {
    for (int ch = 0; ch < 32; ++ch)
      if (channel_map[size_t(ch)] == led_id) return ch;
    return std::nullopt;
  }

  int shank_of(int led_id) const { return led_id / leds_per_shank; }
  int shank_index_of(int led_id) const { return led_id % leds_per_shank; }

  void validate() const {
    if (shanks <= 0 || leds_per_shank <= 0) throw ValidationError("probe layout must be positive");
    if (led_count() != shanks * leds_per_shank)
      throw ValidationError("led count does not match shank layout");
    std::vector<bool> seen(leds.size(), false);
    for (int ch = 0; ch < 32; ++ch) {
      int id = channel_map[size_t(ch)];
      if (id < 0) continue;
      if (id >= led_count()) throw ValidationError("channel_map references unknown led");
      if (seen[size_t(id)]) throw ValidationError("channel_map must be injective");
      seen[size_t(id)] = true;
    }
    for (const auto& led : leds) led.validate();
  }
};

// Channels whose μLEDs sit next to each other on a shank; this is where the
// worst-case crosstalk coupling lives.
inline bool probe_adjacent(const ProbeModel& probe, int ch_a, int ch_b) {
  if (!probe.connected(ch_a) || !probe.connected(ch_b)) return false;
  int la = probe.channel_map[size_t(ch_a)];
  int lb = probe.channel_map[size_t(ch_b)];
  if (probe.shank_of(la) != probe.shank_of(lb)) return false;
  return std::abs(probe.shank_index_of(la) - probe.shank_index_of(lb)) == 1;
}

// Reproducible synthetic probe. Each LED keeps the nominal diode core and
// draws series resistance, slope efficiency and dead zone from the
// configured ranges; channel k maps to led k.
inline ProbeModel make_probe(int shanks, int leds_per_shank, uint64_t seed,
                             const ProbeVariability& var = {}) {
  ProbeModel probe;
  probe.shanks = shanks;
  probe.leds_per_shank = leds_per_shank;
  const int n = shanks * leds_per_shank;
  if (n > 32) throw ValidationError("more μLEDs than ASIC channels");
  Rng rng = Rng::substream(seed, "probe");
  for (int id = 0; id < n; ++id) {
    MicroLedModel led;
    led.r_series_ohm = rng.uniform(var.r_series_lo_ohm, var.r_series_hi_ohm);
    led.eta_uw_per_ma = rng.uniform(var.eta_lo_uw_per_ma, var.eta_hi_uw_per_ma);
    int dead_code = int(rng.uniform_int(uint64_t(var.dead_code_lo), uint64_t(var.dead_code_hi)));
    led.i_dead_a = dead_code * (1e-3 / 1024.0);
    probe.leds.push_back(led);
    probe.channel_map[size_t(id)] = id;
  }
  probe.validate();
  return probe;
}

// Frozen seed for the stock 12-μLED probe; chosen so per-LED optical maxima
// under the 4.6 V compliance span roughly 12.5 to 17 uW.
inline constexpr uint64_t kDefaultProbeSeed = 351;

inline ProbeModel default_probe() { return make_probe(4, 3, kDefaultProbeSeed); }

// --- JSON description file --------------------------------------------------

inline nlohmann::json probe_to_json(const ProbeModel& probe) {
  nlohmann::json j;
  j["shanks"] = probe.shanks;
  j["leds_per_shank"] = probe.leds_per_shank;
  auto& leds = j["leds"] = nlohmann::json::array();
  for (int id = 0; id < probe.led_count(); ++id) {
    const auto& led = probe.leds[size_t(id)];
    leds.push_back({{"id", id},
                    {"i_sat_a", led.i_sat_a},
                    {"n_vt_v", led.n_vt_v},
                    {"r_series_ohm", led.r_series_ohm},
                    {"eta_uw_per_ma", led.eta_uw_per_ma},
                    {"i_dead_a", led.i_dead_a},
                    {"state", to_string(led.state)}});
  }
  auto& map = j["channel_map"] = nlohmann::json::object();
  for (int ch = 0; ch < 32; ++ch)
    if (probe.connected(ch)) map[std::to_string(ch)] = probe.channel_map[size_t(ch)];
  return j;
}

inline ProbeModel probe_from_json(const nlohmann::json& j) {
  ProbeModel probe;
  probe.shanks = j.at("shanks").get<int>();
  probe.leds_per_shank = j.at("leds_per_shank").get<int>();
  probe.leds.assign(size_t(probe.shanks * probe.leds_per_shank), MicroLedModel{});
  for (const auto& item : j.at("leds")) {
    int id = item.at("id").get<int>();
    if (id < 0 || id >= probe.led_count()) throw ValidationError("led id out of range");
    MicroLedModel led;
    if (item.contains("fit_points")) {
      // Raw (V, I) samples: recover the electrical parameters by fitting.
      std::vector<std::pair<double, double>> pts;
      for (const auto& p : item.at("fit_points"))
        pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      IvFit fit = fit_iv(pts);
      led.i_sat_a = fit.i_sat_a;
      led.n_vt_v = fit.n_vt_v;
      led.r_series_ohm = fit.r_series_ohm;
    } else {
      led.i_sat_a = item.value("i_sat_a", led.i_sat_a);
      led.n_vt_v = item.value("n_vt_v", led.n_vt_v);
      led.r_series_ohm = item.at("r_series_ohm").get<double>();
    }
    led.eta_uw_per_ma = item.at("eta_uw_per_ma").get<double>();
    led.i_dead_a = item.value("i_dead_a", 0.0);
    if (item.contains("state")) led.state = led_state_from_string(item.at("state").get<std::string>());
    probe.leds[size_t(id)] = led;
  }
  probe.channel_map.fill(-1);
  for (auto it = j.at("channel_map").begin(); it != j.at("channel_map").end(); ++it) {
    int ch = int(parse_long(it.key()));
    if (ch < 0 || ch >= 32) throw ValidationError("channel out of range in channel_map");
    probe.channel_map[size_t(ch)] = it.value().get<int>();
  }
  probe.validate();
  return probe;
}

// --- measured I-P curves ----------------------------------------------------

struct IpSample {
  int code = 0;
  double current_a = 0;
  double power_uw = 0;
  double current_cv = 0;
  double power_cv = 0;
};

struct IPCurve {
  int channel = 0;
  int reps = 1;
  bool dead = false;
  std::vector<IpSample> samples;  // ordered by code

  double max_power_uw() const {
    double m = 0;
    for (const auto& s : samples) m = std::max(m, s.power_uw);
    return m;
  }
};

inline std::string ip_curves_to_csv(std::span<const IPCurve> curves) {
  std::string out = "channel,code,current_a,power_uw,current_cv,power_cv\n";
  for (const auto& c : curves)
    for (const auto& s : c.samples)
      out += std::to_string(c.channel) + ',' + std::to_string(s.code) + ',' +
             format_double(s.current_a) + ',' + format_double(s.power_uw) + ',' +
             format_double(s.current_cv) + ',' + format_double(s.power_cv) + '\n';
  return out;
}

inline std::vector<IPCurve> ip_curves_from_csv(std::string_view text, int reps = 1) {
  std::vector<IPCurve> curves;
  size_t begin = 0, line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    ++line_no;
    begin = end + 1;
    if (line.empty() || line_no == 1) continue;  // header
    auto f = split_csv(line);
    if (f.size() != 6) throw ValidationError("ip-curve csv line " + std::to_string(line_no) + ": want 6 fields");
    int ch = int(parse_long(f[0]));
    if (curves.empty() || curves.back().channel != ch) {
      curves.push_back(IPCurve{ch, reps, false, {}});
    }
    IpSample s;
    s.code = int(parse_long(f[1]));
    s.current_a = parse_double(f[2]);
    s.power_uw = parse_double(f[3]);
    s.current_cv = parse_double(f[4]);
    s.power_cv = parse_double(f[5]);
    if (!curves.back().samples.empty() && s.code <= curves.back().samples.back().code)
      throw ValidationError("ip-curve csv line " + std::to_string(line_no) + ": codes must increase");
    curves.back().samples.push_back(s);
  }
  return curves;
}

}  // namespace outan
