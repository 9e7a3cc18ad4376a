#pragma once

// Synthetic neural responses to μLED stimulation and the sequence-induction
// statistics pipeline.
//
// Neurons are threshold-linear inhomogeneous Poisson units driven by the
// optical power of their attached μLED, thinned by an absolute refractory
// period. Stronger illumination that would recruit population oscillations is
// not modeled as dynamics; it only raises a per-trial regime flag when the
// local power exceeds the neuron's population threshold.
//
// Scoring follows the sequence-induction protocol: smooth each trial's spike
// trains with a Gaussian kernel (sigma 5 ms) on a 1 ms grid, concatenate the
// units in μLED-slot order, rank-correlate against the mean commanded
// illumination pattern, and test the per-trial correlations against a zero
// median with the signed-rank test.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "outan/common.hpp"
#include "outan/probe.hpp"
#include "outan/rng.hpp"
#include "outan/sequencer.hpp"
#include "outan/stats.hpp"

namespace outan {

inline constexpr double kRateGridMs = 1.0;
inline constexpr double kSmoothSigmaMs = 5.0;
inline constexpr double kTrialPadMs = 25.0;  // spikes generated beyond the scored window

struct NeuronModel {
  int id = 0;
  int attached_led = 0;
  double threshold_uw = 0.1;             // spiking threshold, order 100 nW
  double gain_hz_per_uw = 400.0;
  double baseline_hz = 2.0;
  double population_threshold_uw = 5.0;  // oscillatory-regime onset
  double refractory_ms = 2.0;

  void validate() const {
    if (!(threshold_uw < population_threshold_uw))
      throw ValidationError("threshold must be below the population threshold");
    if (baseline_hz < 0) throw ValidationError("baseline rate must be >= 0");
    if (gain_hz_per_uw < 0) throw ValidationError("gain must be >= 0");
    if (refractory_ms < 0) throw ValidationError("refractory must be >= 0");
  }
};

struct SpikeTrainSet {
  std::vector<int> neuron_ids;
  int n_trials = 0;
  double window_lo_ms = 0;  // relative to trial start
  double window_hi_ms = 0;
  // spikes[neuron][trial]: strictly increasing times in ms, trial-relative.
  std::vector<std::vector<std::vector<double>>> spikes;
  // oscillatory[neuron][trial]: local power exceeded the population threshold.
  std::vector<std::vector<uint8_t>> oscillatory;
};

// Thinning sampler for an inhomogeneous Poisson process with an absolute
// refractory period. rate_fn is in Hz over time in ms; rate_max_hz must bound
// it on [t0, t1).
template <typename RateFn>
std::vector<double> sample_inhomogeneous(Rng& rng, RateFn&& rate_fn_hz, double rate_max_hz,
                                         double t0_ms, double t1_ms, double refractory_ms) {
  std::vector<double> out;
  if (rate_max_hz <= 0) return out;
  const double rate_max_per_ms = rate_max_hz * 1e-3;
  double t = t0_ms;
  double last = -std::numeric_limits<double>::infinity();
  while (true) {
    t += rng.exponential(rate_max_per_ms);
    if (t >= t1_ms) break;
    const double r = rate_fn_hz(t);
    if (rng.uniform01() * rate_max_hz <= r && t - last >= refractory_ms) {
      out.push_back(t);
      last = t;
    }
  }
  return out;
}

// Generates spike trains for every neuron over every trial of a simulated
// session. The drive is the traced optical power of the neuron's μLED; the
// ZOH structure of the trace makes the exact rate maximum available from the
// change points. Per-(trial, neuron) sub-streams keep results reproducible
// and order-independent.
inline SpikeTrainSet generate_spikes(std::span<const NeuronModel> neurons, const Trace& trace,
                                     const ProbeModel& probe, const SequenceMetadata& meta,
                                     uint64_t seed, double pad_ms = kTrialPadMs) {
  SpikeTrainSet set;
  set.n_trials = int(meta.trial_start_ms.size());
  set.window_lo_ms = -pad_ms;
  set.window_hi_ms = meta.active_ms + pad_ms;
  set.spikes.resize(neurons.size());
  set.oscillatory.resize(neurons.size());
  for (size_t u = 0; u < neurons.size(); ++u) {
    neurons[u].validate();
    set.neuron_ids.push_back(neurons[u].id);
    set.spikes[u].resize(size_t(set.n_trials));
    set.oscillatory[u].assign(size_t(set.n_trials), 0);
  }

  for (size_t u = 0; u < neurons.size(); ++u) {
    const NeuronModel& nm = neurons[u];
    auto channel = probe.channel_for_led(nm.attached_led);
    if (!channel.has_value())
      throw ValidationError("neuron " + std::to_string(nm.id) + ": μLED not wired to a channel");

    for (int trial = 0; trial < set.n_trials; ++trial) {
      const double start_ms = meta.trial_start_ms[size_t(trial)];
      const double lo_abs_us = (start_ms + set.window_lo_ms) * 1e3;
      const double hi_abs_us = (start_ms + set.window_hi_ms) * 1e3;

      auto power_at = [&](double t_rel_ms) {
        return trace.power_at(*channel, (start_ms + t_rel_ms) * 1e3);
      };
      auto rate_hz = [&](double t_rel_ms) {
        return nm.baseline_hz + nm.gain_hz_per_uw * std::max(0.0, power_at(t_rel_ms) - nm.threshold_uw);
      };

      // Exact power maximum over the window from the ZOH change points.
      double p_max = trace.power_at(*channel, lo_abs_us);
      for (const TracePoint& pt : trace.channels[size_t(*channel)])
        if (pt.t_us >= lo_abs_us && pt.t_us < hi_abs_us) p_max = std::max(p_max, pt.power_uw);
      const double rate_max =
          nm.baseline_hz + nm.gain_hz_per_uw * std::max(0.0, p_max - nm.threshold_uw);

      Rng rng = Rng::substream(seed, "spikes", uint64_t(trial), uint64_t(nm.id));
      set.spikes[u][size_t(trial)] = sample_inhomogeneous(
          rng, rate_hz, rate_max, set.window_lo_ms, set.window_hi_ms, nm.refractory_ms);
      set.oscillatory[u][size_t(trial)] = p_max > nm.population_threshold_uw ? 1 : 0;
    }
  }
  return set;
}

// Null control: every spike time is redrawn uniformly over the trial window,
// preserving per-trial counts and breaking any time locking.
inline SpikeTrainSet shuffle_spikes(const SpikeTrainSet& set, uint64_t seed) {
  SpikeTrainSet out = set;
  for (size_t u = 0; u < set.spikes.size(); ++u) {
    for (size_t trial = 0; trial < set.spikes[u].size(); ++trial) {
      Rng rng = Rng::substream(seed, "shuffle", trial, uint64_t(set.neuron_ids[u]));
      auto& times = out.spikes[u][trial];
      for (auto& t : times) t = rng.uniform(set.window_lo_ms, set.window_hi_ms);
      std::sort(times.begin(), times.end());
    }
  }
  return out;
}

// --- PSTH ---------------------------------------------------------------------

// Mean spike count per bin across trials, on [t0, t1) with bin_ms bins.
inline std::vector<double> psth(const std::vector<std::vector<double>>& trial_spikes_ms,
                                double bin_ms, double t0_ms, double t1_ms) {
  if (trial_spikes_ms.empty()) throw ValidationError("psth: need at least one event");
  if (!(bin_ms > 0) || !(t1_ms > t0_ms)) throw ValidationError("psth: empty window");
  const size_t n_bins = size_t(std::ceil((t1_ms - t0_ms) / bin_ms));
  std::vector<double> hist(n_bins, 0.0);
  for (const auto& spikes : trial_spikes_ms)
    for (double t : spikes) {
      if (t < t0_ms || t >= t1_ms) continue;
      size_t bin = size_t((t - t0_ms) / bin_ms);
      if (bin < n_bins) hist[bin] += 1.0;
    }
  for (double& v : hist) v /= double(trial_spikes_ms.size());
  return hist;
}

// Scales a histogram to [0, 1] (all-zero stays all-zero), as used for the
// per-unit greyscale display convention.
inline std::vector<double> scale01(std::vector<double> hist) {
  double mx = 0;
  for (double v : hist) mx = std::max(mx, v);
  if (mx > 0)
    for (double& v : hist) v /= mx;
  return hist;
}

// --- kernel-smoothed rates ------------------------------------------------------

// Sum of unit-mass Gaussians centered at the spikes, sampled on a 1 ms grid
// over [t0, t1). Values are spikes per ms, so the grid sum approximates the
// spike count.
inline std::vector<double> smooth_rate(std::span<const double> spikes_ms, double t0_ms,
                                       double t1_ms, double sigma_ms = kSmoothSigmaMs) {
  if (!(sigma_ms > 0)) throw ValidationError("smooth_rate: sigma must be positive");
  const size_t n = size_t(std::ceil((t1_ms - t0_ms) / kRateGridMs));
  std::vector<double> rate(n, 0.0);
  const double norm = 1.0 / (sigma_ms * std::sqrt(2.0 * kPi));
  const double reach = 8.0 * sigma_ms;
  for (double spike : spikes_ms) {
    const long lo = std::max<long>(0, long(std::floor((spike - reach - t0_ms) / kRateGridMs)));
    const long hi = std::min<long>(long(n) - 1, long(std::ceil((spike + reach - t0_ms) / kRateGridMs)));
    for (long g = lo; g <= hi; ++g) {
      const double dt = (t0_ms + double(g) * kRateGridMs) - spike;
      rate[size_t(g)] += norm * std::exp(-0.5 * dt * dt / (sigma_ms * sigma_ms));
    }
  }
  return rate;
}

// --- sequence scoring ------------------------------------------------------------

struct SequenceResult {
  std::vector<double> rho;  // per trial; NaN where the correlation was undefined
  double median_rho = 0;
  WilcoxonResult signed_rank;
  int excluded_trials = 0;
  int used_trials = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Rank-correlates each trial's population rate vector against the mean
// commanded illumination pattern. Units are ordered by their μLED's slot in
// the sequence and concatenated on a common 1 ms grid over the active
// window. Trials with an undefined correlation (e.g. no spikes) are excluded
// and counted.
inline SequenceResult score_sequence(const SpikeTrainSet& trains,
                                     std::span<const NeuronModel> neurons,
                                     const SequenceMetadata& meta) {
  if (trains.n_trials < 2) throw ValidationError("score_sequence: need at least 2 trials");

  // Units ordered by the sequence slot of their attached μLED.
  std::vector<std::pair<size_t, size_t>> slot_unit;  // (slot index, unit index)
  for (size_t u = 0; u < neurons.size(); ++u) {
    for (size_t j = 0; j < meta.params.led_order.size(); ++j)
      if (meta.params.led_order[j] == neurons[u].attached_led) {
        slot_unit.emplace_back(j, u);
        break;
      }
  }
  if (slot_unit.empty()) throw ValidationError("score_sequence: no unit is attached to a sequence μLED");
  std::sort(slot_unit.begin(), slot_unit.end());

  const size_t grid_n = size_t(std::ceil(meta.active_ms / kRateGridMs));

  // Mean illumination pattern: identical across trials by construction, so
  // the mean equals the commanded single-trial pattern.
  std::vector<double> pattern;
  pattern.reserve(slot_unit.size() * grid_n);
  for (auto [slot, u] : slot_unit)
    for (size_t g = 0; g < grid_n; ++g)
      pattern.push_back(sequence_commanded_uw(meta, slot, double(g) * kRateGridMs));

  SequenceResult result;
  result.rho.assign(size_t(trains.n_trials), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> valid;
  std::vector<double> rates;
  for (int trial = 0; trial < trains.n_trials; ++trial) {
    rates.clear();
    rates.reserve(pattern.size());
    for (auto [slot, u] : slot_unit) {
      (void)slot;
      std::vector<double> r =
          smooth_rate(trains.spikes[u][size_t(trial)], 0.0, meta.active_ms);
      rates.insert(rates.end(), r.begin(), r.end());
    }
    try {
      double rho = spearman(pattern, rates);
      result.rho[size_t(trial)] = rho;
      valid.push_back(rho);
    } catch (const ValidationError&) {
      ++result.excluded_trials;
    }
  }
  result.used_trials = int(valid.size());
  if (valid.empty()) throw ValidationError("score_sequence: every trial had an undefined correlation");
  result.median_rho = detail::median_of(valid);
  result.signed_rank = wilcoxon_signed_rank(valid, 0.0);
  return result;
}

// Units ordered by the argmax time of their trial-averaged PSTH over the
// active window; high-gain units reproduce the μLED activation order.
inline std::vector<int> psth_argmax_order(const SpikeTrainSet& trains, double active_ms,
                                          double bin_ms = kRateGridMs) {
  std::vector<std::pair<double, int>> peak_unit;
  for (size_t u = 0; u < trains.spikes.size(); ++u) {
    std::vector<double> hist = psth(trains.spikes[u], bin_ms, 0.0, active_ms);
    size_t arg = 0;
    for (size_t k = 1; k < hist.size(); ++k)
      if (hist[k] > hist[arg]) arg = k;
    peak_unit.emplace_back(double(arg) * bin_ms, trains.neuron_ids[u]);
  }
  std::stable_sort(peak_unit.begin(), peak_unit.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> order;
  for (auto& [t, id] : peak_unit) order.push_back(id);
  return order;
}

// --- file formats -----------------------------------------------------------------

inline std::string spikes_to_csv(const SpikeTrainSet& set) {
  std::string out = "trial,neuron,spike_time_ms\n";
  for (int trial = 0; trial < set.n_trials; ++trial)
    for (size_t u = 0; u < set.spikes.size(); ++u)
      for (double t : set.spikes[u][size_t(trial)])
        out += std::to_string(trial) + ',' + std::to_string(set.neuron_ids[u]) + ',' +
               format_double(t) + '\n';
  return out;
}

inline SpikeTrainSet spikes_from_csv(std::string_view text, std::span<const int> neuron_ids,
                                     int n_trials, double window_lo_ms, double window_hi_ms) {
  SpikeTrainSet set;
  set.neuron_ids.assign(neuron_ids.begin(), neuron_ids.end());
  set.n_trials = n_trials;
  set.window_lo_ms = window_lo_ms;
  set.window_hi_ms = window_hi_ms;
  set.spikes.assign(neuron_ids.size(), std::vector<std::vector<double>>(size_t(n_trials)));
  set.oscillatory.assign(neuron_ids.size(), std::vector<uint8_t>(size_t(n_trials), 0));

  size_t begin = 0, line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    begin = end + 1;
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    auto f = split_csv(line);
    if (f.size() != 3) throw ValidationError("spike csv line " + std::to_string(line_no) + ": want 3 fields");
    int trial = int(parse_long(f[0]));
    int neuron = int(parse_long(f[1]));
    if (trial < 0 || trial >= n_trials)
      throw ValidationError("spike csv line " + std::to_string(line_no) + ": trial out of range");
    auto it = std::find(set.neuron_ids.begin(), set.neuron_ids.end(), neuron);
    if (it == set.neuron_ids.end())
      throw ValidationError("spike csv line " + std::to_string(line_no) + ": unknown neuron");
    set.spikes[size_t(it - set.neuron_ids.begin())][size_t(trial)].push_back(parse_double(f[2]));
  }
  for (auto& per_neuron : set.spikes)
    for (auto& times : per_neuron) std::sort(times.begin(), times.end());
  return set;
}

inline nlohmann::json sequence_result_to_json(const SequenceResult& result) {
  nlohmann::json j;
  auto& rho = j["rho_per_trial"] = nlohmann::json::array();
  for (double r : result.rho) {
    if (std::isnan(r)) rho.push_back(nullptr);
    else rho.push_back(r);
  }
  j["median_rho"] = result.median_rho;
  j["w_plus"] = result.signed_rank.w_plus;
  j["p_two_sided"] = result.signed_rank.p_two_sided;
  j["exact"] = result.signed_rank.exact;
  j["excluded_trials"] = result.excluded_trials;
  j["used_trials"] = result.used_trials;
  return j;
}

inline nlohmann::json neurons_to_json(std::span<const NeuronModel> neurons) {
  nlohmann::json j = nlohmann::json::array();
  for (const NeuronModel& n : neurons)
    j.push_back({{"id", n.id},
                 {"attached_led", n.attached_led},
                 {"threshold_uw", n.threshold_uw},
                 {"gain_hz_per_uw", n.gain_hz_per_uw},
                 {"baseline_hz", n.baseline_hz},
                 {"population_threshold_uw", n.population_threshold_uw},
                 {"refractory_ms", n.refractory_ms}});
  return j;
}

inline std::vector<NeuronModel> neurons_from_json(const nlohmann::json& j) {
  std::vector<NeuronModel> neurons;
  for (const auto& item : j) {
    NeuronModel n;
    n.id = item.at("id").get<int>();
    n.attached_led = item.at("attached_led").get<int>();
    n.threshold_uw = item.value("threshold_uw", n.threshold_uw);
    n.gain_hz_per_uw = item.value("gain_hz_per_uw", n.gain_hz_per_uw);
    n.baseline_hz = item.value("baseline_hz", n.baseline_hz);
    n.population_threshold_uw = item.value("population_threshold_uw", n.population_threshold_uw);
    n.refractory_ms = item.value("refractory_ms", n.refractory_ms);
    n.validate();
    neurons.push_back(n);
  }
  return neurons;
}

}  // namespace outan
