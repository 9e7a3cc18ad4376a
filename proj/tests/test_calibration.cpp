#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "outan/calibration.hpp"

using namespace outan;

namespace {

// Synthetic measured curve that rises linearly to max_uw at code 1023.
IPCurve linear_curve(int channel, double max_uw) {
  IPCurve c;
  c.channel = channel;
  c.reps = 1;
  for (int code = 0; code < 1024; ++code) {
    IpSample s;
    s.code = code;
    s.power_uw = max_uw * double(code) / 1023.0;
    s.current_a = 1e-3 * double(code) / 1024.0;
    c.samples.push_back(s);
  }
  return c;
}

// Independent nearest-sample oracle over a monotone curve: binary search for
// the insertion point, then compare the two neighbors (ties to lower code).
uint16_t nearest_oracle(const IPCurve& curve, double desired_uw) {
  auto it = std::lower_bound(curve.samples.begin(), curve.samples.end(), desired_uw,
                             [](const IpSample& s, double v) { return s.power_uw < v; });
  if (it == curve.samples.begin()) return uint16_t(it->code);
  if (it == curve.samples.end()) return uint16_t(curve.samples.back().code);
  double err_hi = std::abs(it->power_uw - desired_uw);
  double err_lo = std::abs(std::prev(it)->power_uw - desired_uw);
  return err_lo <= err_hi ? uint16_t(std::prev(it)->code) : uint16_t(it->code);
}

}  // namespace

TEST_CASE("published LSB anchors: 12, 13, 16 uW targets") {
  for (auto [weakest, lsb_nw] : {std::pair{12.5, 11.71875}, {13.4, 12.6953125}, {16.2, 15.625}}) {
    std::vector<IPCurve> curves;
    curves.push_back(linear_curve(0, weakest));
    curves.push_back(linear_curve(1, 17.0));
    CalibrationTable table = build_table(curves);
    CHECK(table.lsb_uw * 1024.0 == table.target_max_power_uw);
    CHECK_THAT(table.lsb_uw * 1e3, Catch::Matchers::WithinAbs(lsb_nw, 0.05));
  }
}

TEST_CASE("single linear channel matches the closed-form nearest mapping") {
  std::vector<IPCurve> curves{linear_curve(0, 12.0)};
  CalibrationTable table = build_table(curves);
  CHECK(table.target_max_power_uw == 12.0);

  for (int row = 0; row < 1024; ++row) {
    // Desired r*max/1024 against samples c*max/1023: nearest c is
    // round(r*1023/1024) with half-way ties toward the lower code.
    double x = double(row) * 1023.0 / 1024.0;
    int expect = int(std::ceil(x - 0.5));
    CHECK(table.rows[size_t(row)][0] == expect);
    CHECK(table.rows[size_t(row)][0] == nearest_oracle(curves[0], table.desired_uw(row)));
  }
}

TEST_CASE("entries match the independent oracle on random monotone curves") {
  Rng rng(2024);
  std::vector<IPCurve> curves;
  for (int ch = 0; ch < 4; ++ch) {
    IPCurve c;
    c.channel = ch;
    double p = 0;
    for (int code = 0; code < 1024; ++code) {
      p += rng.uniform(0.0, 0.033);  // non-decreasing, max ~ 15-18 uW
      c.samples.push_back({code, 0.0, p, 0.0, 0.0});
    }
    curves.push_back(c);
  }
  CalibrationTable table = build_table(curves);
  for (const IPCurve& c : curves) {
    uint16_t prev = 0;
    for (int row = 0; row < 1024; ++row) {
      uint16_t entry = table.rows[size_t(row)][size_t(c.channel)];
      CHECK(entry == nearest_oracle(c, table.desired_uw(row)));
      REQUIRE(entry >= prev);  // column monotonicity
      prev = entry;
    }
  }
}

TEST_CASE("dead channels are flagged and filled with code 0") {
  std::vector<IPCurve> curves{linear_curve(0, 13.0), linear_curve(1, 15.0)};
  curves[1].samples.clear();
  for (int code = 0; code < 1024; ++code) curves[1].samples.push_back({code, 0.0, 0.0, 0.0, 0.0});
  curves[1].dead = true;

  CalibrationTable table = build_table(curves);
  CHECK(table.target_max_power_uw == 13.0);  // dead channel excluded from the minimum
  CHECK(table.dead[1]);
  CHECK_FALSE(table.live[1]);
  for (int row = 0; row < 1024; row += 97) CHECK(table.rows[size_t(row)][1] == 0);

  std::vector<IPCurve> all_dead{curves[1]};
  CHECK_THROWS_AS(build_table(all_dead), ValidationError);
}

TEST_CASE("lookup selects the nearest row with ties rounded down") {
  std::vector<IPCurve> curves{linear_curve(0, 12.0)};
  CalibrationTable table = build_table(curves);

  CHECK(lookup(table, 0, 0.0) == 0);
  CHECK(lookup(table, 0, table.target_max_power_uw) == table.rows[1023][0]);
  CHECK(lookup_row(table, 0.5 * table.target_max_power_uw) == 512);
  CHECK(lookup_row(table, 10.5 * table.lsb_uw) == 10);   // exact midpoint rounds down
  CHECK(lookup_row(table, 10.51 * table.lsb_uw) == 11);
  CHECK_THROWS_AS(lookup(table, 0, table.target_max_power_uw + 1e-9), ValidationError);
  CHECK_THROWS_AS(lookup(table, 0, -0.1), ValidationError);
  CHECK_THROWS_AS(lookup(table, 5, 1.0), ValidationError);  // never calibrated
}

TEST_CASE("linearity of a perfectly linear response is zero") {
  std::vector<double> response;
  for (int k = 0; k < 1024; ++k) response.push_back(0.01 * k);
  LinearityReport report = linearity(response, 0.01);
  REQUIRE(report.dnl.size() == 1023);
  REQUIRE(report.inl.size() == 1024);
  for (double d : report.dnl) CHECK_THAT(d, Catch::Matchers::WithinAbs(0.0, 1e-9));
  for (double i : report.inl) CHECK_THAT(i, Catch::Matchers::WithinAbs(0.0, 1e-9));

  std::vector<double> one{0.0};
  CHECK_THROWS_AS(linearity(one, 0.01), ValidationError);
}

TEST_CASE("pre-calibration DNL hits -1 in the saturated plateau") {
  // Noise-free saturating response: linear up to the knee, then flat.
  std::vector<double> response;
  double lsb = 12.0 / 1024.0;
  for (int code = 0; code < 1024; ++code)
    response.push_back(std::min(double(code), 614.0) * 20e-3);  // ~20 nW per code, knee at 614
  LinearityReport report = linearity(response, lsb);
  for (size_t k = 650; k < report.dnl.size(); ++k)
    CHECK_THAT(report.dnl[k], Catch::Matchers::WithinAbs(-1.0, 1e-9));
  // Rising region steps exceed one LSB (the raw curve is steeper than the
  // calibrated grid), so |DNL| is large on both sides of the knee.
  CHECK(std::abs(report.dnl[100]) > 0.5);
}

TEST_CASE("measured curves: zero noise means zero CV, defaults mostly under 0.1 %") {
  AsicState asic = powered_on_asic();
  ProbeModel probe = make_probe(1, 3, 7);

  SECTION("noise off") {
    AsicState quiet = asic;
    quiet.noise_cv = 0;
    quiet.noise_floor_a = 0;
    quiet.power_noise_floor_uw = 0;
    auto curves = measure_ip_curves(quiet, probe, 5, 1);
    REQUIRE(curves.size() == 3);
    for (const auto& c : curves)
      for (const auto& s : c.samples) {
        REQUIRE(s.current_cv == 0.0);
        REQUIRE(s.power_cv == 0.0);
      }
  }

  SECTION("default noise: most commands under 0.1 % current CV") {
    auto curves = measure_ip_curves(asic, probe, 9, 1);
    int total = 0, under = 0;
    for (const auto& c : curves)
      for (const auto& s : c.samples) {
        if (s.code == 0) continue;
        ++total;
        if (s.current_cv < 1e-3) ++under;
      }
    CHECK(double(under) / double(total) >= 0.88);
  }

  SECTION("open μLED yields a dead, zero-power curve") {
    ProbeModel broken = probe;
    broken.leds[1] = make_failed(broken.leds[1], LedState::open_circuit);
    AsicState quiet = asic;
    quiet.noise_cv = 0;
    quiet.noise_floor_a = 0;
    quiet.power_noise_floor_uw = 0;
    auto curves = measure_ip_curves(quiet, broken, 2, 1);
    CHECK_FALSE(curves[0].dead);
    CHECK(curves[1].dead);
    for (const auto& s : curves[1].samples) REQUIRE(s.power_uw == 0.0);
  }

  SECTION("faulted asic cannot measure") {
    const PowerEvent bad[] = {{Rail::high_5v, true, 0}};
    AsicState faulted = power_transition(AsicState{}, bad);
    CHECK_THROWS_AS(measure_ip_curves(faulted, probe, 1, 1), StateError);
  }
}

TEST_CASE("repeated measurement is deterministic under a fixed seed") {
  AsicState asic = powered_on_asic();
  ProbeModel probe = make_probe(1, 2, 3);
  auto a = measure_ip_curves(asic, probe, 3, 42);
  auto b = measure_ip_curves(asic, probe, 3, 42);
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k)
    for (size_t s = 0; s < a[k].samples.size(); ++s) {
      REQUIRE(a[k].samples[s].current_a == b[k].samples[s].current_a);
      REQUIRE(a[k].samples[s].power_uw == b[k].samples[s].power_uw);
    }
}

TEST_CASE("saturation prevention: no entry commands into the plateau beyond target") {
  AsicState asic = powered_on_asic();
  asic.noise_cv = 0;
  asic.noise_floor_a = 0;
  asic.power_noise_floor_uw = 0;
  ProbeModel probe = default_probe();
  auto curves = measure_ip_curves(asic, probe, 1, 1);
  CalibrationTable table = build_table(curves);
  for (const auto& c : curves) {
    double cap = c.max_power_uw();
    for (int row = 0; row < 1024; ++row) {
      uint16_t code = table.rows[size_t(row)][size_t(c.channel)];
      REQUIRE(c.samples[code].power_uw <= cap + 1e-12);
    }
  }
}

TEST_CASE("gain mismatch is cancelled up to code quantization") {
  AsicState asic = powered_on_asic();
  asic.noise_cv = 0;
  asic.noise_floor_a = 0;
  asic.power_noise_floor_uw = 0;
  Rng rng(5);
  for (auto& g : asic.channel_gain) g = rng.uniform(0.9, 1.1);

  // Identical LEDs everywhere; only the per-channel gains differ.
  ProbeModel probe = make_probe(4, 3, 1);
  for (auto& led : probe.leds) led = led_from_forward_anchor(0.75e-3, 4.6);

  auto curves = measure_ip_curves(asic, probe, 1, 1);
  CalibrationTable table = build_table(curves);

  // Per-channel step size of the raw transfer, in LSB units; nearest-code
  // calibration cannot do better than half a step on each channel.
  std::array<double, 32> step_lsb{};
  for (const auto& c : curves) {
    double dmax = 0;
    for (size_t k = 1; k < c.samples.size(); ++k)
      dmax = std::max(dmax, c.samples[k].power_uw - c.samples[k - 1].power_uw);
    step_lsb[size_t(c.channel)] = dmax / table.lsb_uw;
  }

  for (int row = 0; row < 1024; row += 11) {
    double lo = 1e300, hi = -1e300;
    double bound = 0;
    for (const auto& c : curves) {
      uint16_t code = table.rows[size_t(row)][size_t(c.channel)];
      double p = c.samples[code].power_uw;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
      bound = std::max(bound, step_lsb[size_t(c.channel)]);
    }
    // All channels land on the same desired value within one raw code step.
    REQUIRE((hi - lo) / table.lsb_uw <= bound + 1e-9);
    REQUIRE(std::abs(hi - table.desired_uw(row)) / table.lsb_uw <= 0.5 * bound + 1e-9);
    REQUIRE(std::abs(lo - table.desired_uw(row)) / table.lsb_uw <= 0.5 * bound + 1e-9);
  }
}

TEST_CASE("table csv round trip") {
  std::vector<IPCurve> curves{linear_curve(0, 12.5), linear_curve(3, 14.0)};
  CalibrationTable table = build_table(curves);
  std::string csv = table_to_csv(table);
  CalibrationTable back = table_from_csv(csv);
  CHECK(back.target_max_power_uw == table.target_max_power_uw);
  CHECK(back.lsb_uw == table.lsb_uw);
  CHECK(back.live == table.live);
  CHECK(back.dead == table.dead);
  CHECK(back.rows == table.rows);
}
