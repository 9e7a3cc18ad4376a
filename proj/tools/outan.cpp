// Command-line front end: file-based pipelines over the emulator library.
//
// Exit codes: 0 success, 1 usage, 2 data/validation, 3 simulated hardware
// fault.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "outan/asic.hpp"
#include "outan/calibration.hpp"
#include "outan/common.hpp"
#include "outan/experiment.hpp"
#include "outan/microled.hpp"
#include "outan/probe.hpp"
#include "outan/protocol.hpp"
#include "outan/rng.hpp"
#include "outan/sequencer.hpp"
#include "outan/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace outan;

namespace {

struct GlobalOpts {
  uint64_t seed = 1;
  std::string out_dir = ".";
  std::string probe_path;
};

ProbeModel load_probe(const GlobalOpts& g) {
  if (g.probe_path.empty()) return default_probe();
  return probe_from_json(json::parse(read_text_file(g.probe_path)));
}

CalibrationTable load_table(const std::string& path) {
  return table_from_csv(read_text_file(path));
}

std::string out_path(const GlobalOpts& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

// --- encode / decode ---------------------------------------------------------

void cmd_encode(const std::string& in, const std::string& out) {
  auto cmds = commands_from_csv(read_text_file(in));
  std::vector<Frame> frames;
  frames.reserve(cmds.size());
  for (const Command& c : cmds) frames.push_back(encode_command(c));
  write_text_file(out, frames_to_hex(frames));
}

void cmd_decode(const std::string& in, const std::string& out) {
  auto frames = frames_from_hex(read_text_file(in));
  std::vector<Command> cmds;
  cmds.reserve(frames.size());
  for (const Frame& f : frames) cmds.push_back(decode_frame(f));
  write_text_file(out, commands_to_csv(cmds));
}

// --- calibrate ----------------------------------------------------------------

CalibrationTable run_calibration(const GlobalOpts& g, const ProbeModel& probe, int reps,
                                 bool write_artifacts) {
  AsicState asic = powered_on_asic();
  auto curves = measure_ip_curves(asic, probe, reps, g.seed);
  CalibrationTable table = build_table(curves);

  if (write_artifacts) {
    write_text_file(out_path(g, "probe.json"), probe_to_json(probe).dump(2) + "\n");
    write_text_file(out_path(g, "curves.csv"), ip_curves_to_csv(curves));
    write_text_file(out_path(g, "table.csv"), table_to_csv(table));

    std::vector<LinearityReport> pre, post;
    for (const IPCurve& c : curves) {
      if (c.dead) continue;
      std::vector<double> raw;
      for (const IpSample& s : c.samples) raw.push_back(s.power_uw);
      pre.push_back(linearity(raw, c.max_power_uw() / double(kTableRows), c.channel,
                              CalibrationPhase::pre));
      std::vector<double> calibrated;
      for (int row = 0; row < kTableRows; ++row)
        calibrated.push_back(c.samples[table.rows[size_t(row)][size_t(c.channel)]].power_uw);
      post.push_back(linearity(calibrated, table.lsb_uw, c.channel, CalibrationPhase::post));
    }
    write_text_file(out_path(g, "linearity_pre.csv"), linearity_to_csv(pre));
    write_text_file(out_path(g, "linearity_post.csv"), linearity_to_csv(post));
  }
  return table;
}

// --- asic step ------------------------------------------------------------------

void cmd_asic_step(const GlobalOpts& g, const std::string& frames_path,
                   const std::string& state_path, const std::string& out) {
  ProbeModel probe = load_probe(g);
  AsicState state = state_path.empty()
                        ? powered_on_asic()
                        : asic_from_snapshot_json(json::parse(read_text_file(state_path)));
  auto frames = frames_from_hex(read_text_file(frames_path));
  for (const Frame& f : frames) state = apply_frame(state, f);
  state = update_channel_outputs(state, probe);
  write_text_file(out, asic_snapshot_json(state, &probe).dump(2) + "\n");
}

// --- compile / simulate ------------------------------------------------------------

struct LoadedScript {
  StimScript script;
  std::optional<SequenceMetadata> meta;
};

LoadedScript load_script(const std::string& path) {
  json j = json::parse(read_text_file(path));
  return {script_from_json(j), sequence_meta_from_json(j)};
}

void cmd_compile(const std::string& script_path, const std::string& table_path,
                 const std::string& out) {
  LoadedScript loaded = load_script(script_path);
  CommandStream stream = compile(loaded.script, load_table(table_path));
  write_text_file(out, stream_to_csv(stream));
}

void cmd_simulate(const GlobalOpts& g, const std::string& stream_path, const std::string& out,
                  const std::string& snapshot_out) {
  ProbeModel probe = load_probe(g);
  CommandStream stream = stream_from_csv(read_text_file(stream_path));
  SimResult result = simulate(stream, powered_on_asic(), probe);
  write_text_file(out, trace_to_csv(result.trace));
  if (!snapshot_out.empty())
    write_text_file(snapshot_out, asic_snapshot_json(result.state, &probe).dump(2) + "\n");
}

// --- experiment ----------------------------------------------------------------------

std::vector<NeuronModel> default_neurons(const SequenceMetadata& meta) {
  // Up to seven units, attached to the lowest-numbered μLEDs of the sequence
  // set so the same population serves permuted orders of the same set.
  std::vector<int> leds = meta.params.led_order;
  std::sort(leds.begin(), leds.end());
  std::vector<NeuronModel> neurons;
  for (size_t u = 0; u < leds.size() && u < 7; ++u) {
    NeuronModel n;
    n.id = int(u);
    n.attached_led = leds[u];
    neurons.push_back(n);
  }
  return neurons;
}

// Sequence trials are identical, so one trial period is compiled and
// simulated and every trial draws from that window. The equivalence to a
// full-session run holds because a trial's spike window never reaches into
// the previous trial's activity (pad < inter-trial gap) and channels hold
// zero after their off frame.
struct SequenceRun {
  CommandStream stream;  // single trial period
  Trace trace;
  SequenceMetadata meta_replicated;
};

SequenceRun run_sequence_trials(const SequenceMetadata& meta, const CalibrationTable& table,
                                const ProbeModel& probe) {
  if (meta.params.inter_trial_ms < kTrialPadMs)
    throw ValidationError("inter-trial gap must be at least the trial pad (" +
                          format_double(kTrialPadMs) + " ms)");
  SequenceParams one = meta.params;
  one.n_trials = 1;
  SequenceScript single = make_sequence_script(one, probe);
  SequenceRun run;
  run.stream = compile(single.script, table);
  run.trace = simulate(run.stream, powered_on_asic(), probe).trace;
  run.meta_replicated = meta;
  run.meta_replicated.trial_start_ms.assign(size_t(meta.params.n_trials), 0.0);
  return run;
}

void cmd_experiment_run(const GlobalOpts& g, const std::string& script_path,
                        const std::string& table_path, const std::string& neurons_path,
                        int reps) {
  ProbeModel probe = load_probe(g);
  LoadedScript loaded = load_script(script_path);
  if (!loaded.meta.has_value())
    throw ValidationError("experiment run needs a script with a sequence block");
  CalibrationTable table =
      table_path.empty() ? run_calibration(g, probe, reps, false) : load_table(table_path);

  SequenceRun run = run_sequence_trials(*loaded.meta, table, probe);
  std::vector<NeuronModel> neurons =
      neurons_path.empty() ? default_neurons(*loaded.meta)
                           : neurons_from_json(json::parse(read_text_file(neurons_path)));
  SpikeTrainSet trains = generate_spikes(neurons, run.trace, probe, run.meta_replicated, g.seed);
  write_text_file(out_path(g, "spikes.csv"), spikes_to_csv(trains));
  write_text_file(out_path(g, "neurons.json"), neurons_to_json(neurons).dump(2) + "\n");
}

void cmd_experiment_score(const std::string& spikes_path, const std::string& script_path,
                          const std::string& neurons_path, const std::string& out) {
  LoadedScript loaded = load_script(script_path);
  if (!loaded.meta.has_value())
    throw ValidationError("experiment score needs a script with a sequence block");
  std::vector<NeuronModel> neurons = neurons_from_json(json::parse(read_text_file(neurons_path)));
  std::vector<int> ids;
  for (const NeuronModel& n : neurons) ids.push_back(n.id);
  SpikeTrainSet trains =
      spikes_from_csv(read_text_file(spikes_path), ids, loaded.meta->params.n_trials,
                      -kTrialPadMs, loaded.meta->active_ms + kTrialPadMs);
  SequenceResult result = score_sequence(trains, neurons, *loaded.meta);
  write_text_file(out, sequence_result_to_json(result).dump(2) + "\n");
}

// --- pipeline ---------------------------------------------------------------------------

// ZOH steps per full waveform cycle for every channel driven by a sinusoid.
json zoh_step_metric(const StimScript& script, const Trace& trace) {
  json metric = json::object();
  for (const StimEvent& ev : script.events) {
    const auto* sine = std::get_if<SinusoidWave>(&ev.wave);
    if (sine == nullptr || sine->freq_hz <= 0) continue;
    const double cycle_us = 1e6 / sine->freq_hz;
    std::vector<int> per_cycle;
    for (double t0 = ev.start_us; t0 + cycle_us <= ev.start_us + ev.duration_us + 1e-9;
         t0 += cycle_us) {
      int updates = 0;
      for (const TracePoint& p : trace.channels[size_t(ev.channel)])
        if (p.t_us >= t0 && p.t_us < t0 + cycle_us) ++updates;
      per_cycle.push_back(updates);
    }
    if (!per_cycle.empty()) metric[std::to_string(ev.channel)] = per_cycle;
  }
  return metric;
}

struct PipelineOpts {
  std::string script_path;
  std::string table_path;
  std::string neurons_path;
  int reps = 9;
  // Inline sequence construction when no script file is given.
  std::vector<int> sequence_leds;
  double per_led_ms = 15.0;
  double inter_trial_ms = 65.0;
  double peak_uw = 0.45;
  int trials = 500;
};

void cmd_pipeline(const GlobalOpts& g, const PipelineOpts& opts) {
  ProbeModel probe = load_probe(g);
  write_text_file(out_path(g, "probe.json"), probe_to_json(probe).dump(2) + "\n");

  CalibrationTable table = opts.table_path.empty()
                               ? run_calibration(g, probe, opts.reps, true)
                               : load_table(opts.table_path);

  LoadedScript loaded;
  if (!opts.script_path.empty()) {
    loaded = load_script(opts.script_path);
  } else if (!opts.sequence_leds.empty()) {
    SequenceParams params;
    params.led_order = opts.sequence_leds;
    params.per_led_ms = opts.per_led_ms;
    params.inter_trial_ms = opts.inter_trial_ms;
    params.peak_uw = opts.peak_uw;
    params.n_trials = opts.trials;
    params.seed = g.seed;
    SequenceScript seq = make_sequence_script(params, probe);
    loaded.script = std::move(seq.script);
    loaded.meta = std::move(seq.meta);
  } else {
    throw ValidationError("pipeline needs --script or --sequence-leds");
  }
  write_text_file(out_path(g, "script.json"),
                  script_to_json(loaded.script, loaded.meta ? &*loaded.meta : nullptr).dump(2) + "\n");

  json stats;
  stats["seed"] = g.seed;

  if (loaded.meta.has_value()) {
    // Sequence fast path: one trial period, replicated trials.
    SequenceRun run = run_sequence_trials(*loaded.meta, table, probe);
    write_text_file(out_path(g, "stream.csv"), stream_to_csv(run.stream));
    write_text_file(out_path(g, "trace.csv"), trace_to_csv(run.trace));
    stats["trial_pattern_only"] = true;
    stats["frames_per_trial"] = run.stream.items.size();

    SequenceParams one = loaded.meta->params;
    one.n_trials = 1;
    stats["zoh_steps_per_cycle"] =
        zoh_step_metric(make_sequence_script(one, probe).script, run.trace);

    std::vector<NeuronModel> neurons =
        opts.neurons_path.empty()
            ? default_neurons(*loaded.meta)
            : neurons_from_json(json::parse(read_text_file(opts.neurons_path)));
    write_text_file(out_path(g, "neurons.json"), neurons_to_json(neurons).dump(2) + "\n");

    SpikeTrainSet trains =
        generate_spikes(neurons, run.trace, probe, run.meta_replicated, g.seed);
    write_text_file(out_path(g, "spikes.csv"), spikes_to_csv(trains));

    SequenceResult result = score_sequence(trains, neurons, *loaded.meta);
    write_text_file(out_path(g, "result.json"), sequence_result_to_json(result).dump(2) + "\n");
    stats["median_rho"] = result.median_rho;
    stats["p_two_sided"] = result.signed_rank.p_two_sided;
    stats["psth_argmax_order"] = psth_argmax_order(trains, loaded.meta->active_ms);
  } else {
    CommandStream stream = compile(loaded.script, table);
    write_text_file(out_path(g, "stream.csv"), stream_to_csv(stream));
    SimResult result = simulate(stream, powered_on_asic(), probe);
    write_text_file(out_path(g, "trace.csv"), trace_to_csv(result.trace));
    stats["frames"] = stream.items.size();
    stats["zoh_steps_per_cycle"] = zoh_step_metric(loaded.script, result.trace);
    stats["final_power_consumption_mw"] = power_consumption_mw(result.state, probe);
  }

  write_text_file(out_path(g, "stats.json"), stats.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"outan: 32-channel μLED current-source controller and emulator"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "root seed for all stochastic stages");
  app.add_option("--out", g.out_dir, "output directory for multi-file results");
  app.add_option("--probe", g.probe_path, "probe description JSON (default: stock 12-μLED probe)");

  std::string in_path, out_file, table_path, state_path, stream_path, script_path;
  std::string neurons_path, spikes_path, snapshot_out;
  int reps = 9;

  auto* enc = app.add_subcommand("encode", "command CSV -> hex frame file");
  enc->add_option("--in", in_path, "command csv (address,value)")->required();
  enc->add_option("--out-file", out_file, "hex frame file")->required();
  enc->callback([&] { cmd_encode(in_path, out_file); });

  auto* dec = app.add_subcommand("decode", "hex frame file -> command CSV");
  dec->add_option("--in", in_path, "hex frame file")->required();
  dec->add_option("--out-file", out_file, "command csv")->required();
  dec->callback([&] { cmd_decode(in_path, out_file); });

  auto* cal = app.add_subcommand("calibrate", "measure I-P curves and build the power table");
  cal->add_option("--reps", reps, "repetitions per code (default 9)");
  cal->callback([&] { run_calibration(g, load_probe(g), reps, true); });

  auto* cmp = app.add_subcommand("compile", "stimulation script -> command stream");
  cmp->add_option("--script", script_path, "script json")->required();
  cmp->add_option("--table", table_path, "calibration table csv")->required();
  cmp->add_option("--out-file", out_file, "stream csv")->required();
  cmp->callback([&] { cmd_compile(script_path, table_path, out_file); });

  auto* sim = app.add_subcommand("simulate", "command stream -> output trace");
  sim->add_option("--stream", stream_path, "stream csv")->required();
  sim->add_option("--out-file", out_file, "trace csv")->required();
  sim->add_option("--snapshot", snapshot_out, "also write the final asic snapshot json");
  sim->callback([&] { cmd_simulate(g, stream_path, out_file, snapshot_out); });

  auto* asic = app.add_subcommand("asic", "asic state operations");
  asic->require_subcommand(1);
  auto* step = asic->add_subcommand("step", "apply a hex frame file to a state snapshot");
  step->add_option("--frames", in_path, "hex frame file")->required();
  step->add_option("--state", state_path, "input snapshot json (default: freshly powered)");
  step->add_option("--out-file", out_file, "output snapshot json")->required();
  step->callback([&] { cmd_asic_step(g, in_path, state_path, out_file); });

  auto* exp = app.add_subcommand("experiment", "synthetic sequence-induction experiments");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "generate spike trains for a sequence script");
  run->add_option("--script", script_path, "script json with a sequence block")->required();
  run->add_option("--table", table_path, "calibration table csv (default: calibrate in place)");
  run->add_option("--neurons", neurons_path, "neuron model json (default: 7 units)");
  run->add_option("--reps", reps, "calibration repetitions when no table is given");
  run->callback([&] { cmd_experiment_run(g, script_path, table_path, neurons_path, reps); });

  auto* score = exp->add_subcommand("score", "rank-correlation statistics for recorded spikes");
  score->add_option("--spikes", spikes_path, "spike csv")->required();
  score->add_option("--script", script_path, "script json with a sequence block")->required();
  score->add_option("--neurons", neurons_path, "neuron model json")->required();
  score->add_option("--out-file", out_file, "result json")->required();
  score->callback([&] { cmd_experiment_score(spikes_path, script_path, neurons_path, out_file); });

  PipelineOpts popts;
  auto* pipe = app.add_subcommand("pipeline", "compile -> simulate -> spikes -> statistics");
  pipe->add_option("--script", popts.script_path, "script json");
  pipe->add_option("--table", popts.table_path, "calibration table csv (default: calibrate)");
  pipe->add_option("--neurons", popts.neurons_path, "neuron model json");
  pipe->add_option("--reps", popts.reps, "calibration repetitions");
  pipe->add_option("--sequence-leds", popts.sequence_leds,
                   "build a sequence script over these μLED ids (activation order)")
      ->delimiter(',');
  pipe->add_option("--per-led-ms", popts.per_led_ms, "sinusoid duration per μLED (15-20 ms)");
  pipe->add_option("--inter-trial-ms", popts.inter_trial_ms, "gap between trials");
  pipe->add_option("--peak-uw", popts.peak_uw, "sinusoid peak power");
  pipe->add_option("--trials", popts.trials, "number of trials");
  pipe->callback([&] { cmd_pipeline(g, popts); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const StateError& e) {
    std::cerr << "hardware fault: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
