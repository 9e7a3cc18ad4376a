#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "outan/microled.hpp"
#include "outan/rng.hpp"

using namespace outan;

TEST_CASE("led_voltage zero point and monotonicity") {
  MicroLedModel led = reference_led();
  CHECK(led_voltage(led, 0.0) == 0.0);
  CHECK(led_voltage(led, 0.5e-3) < led_voltage(led, 1e-3));

  // Strict monotonicity over random valid parameter sets.
  Rng rng(101);
  for (int trial = 0; trial < 50; ++trial) {
    MicroLedModel m;
    m.i_sat_a = std::pow(10.0, rng.uniform(-13, -8));
    m.n_vt_v = rng.uniform(0.05, 0.5);
    m.r_series_ohm = rng.uniform(0.0, 2000.0);
    double prev = led_voltage(m, 0.0);
    for (double i = 1e-6; i <= 1e-3; i *= 1.5) {
      double v = led_voltage(m, i);
      REQUIRE(v > prev);
      prev = v;
    }
  }
}

TEST_CASE("reference model hits the 5 V at 1 mA forward anchor") {
  MicroLedModel led = reference_led();
  CHECK_THAT(led_voltage(led, 1e-3), Catch::Matchers::WithinAbs(5.0, 1e-12));
  CHECK_THAT(led_current(led, 5.0), Catch::Matchers::WithinRel(1e-3, 1e-6));
}

TEST_CASE("led_current inverts led_voltage within 1e-6 relative") {
  MicroLedModel led = reference_led();
  CHECK(led_current(led, 0.0) == 0.0);
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    double i = std::pow(10.0, rng.uniform(-6, -3));  // 1 uA .. 1 mA
    double v = led_voltage(led, i);
    double i_back = led_current(led, v);
    REQUIRE_THAT(i_back, Catch::Matchers::WithinRel(i, 1e-6));
  }
}

TEST_CASE("led_power has a dead zone and is linear above it") {
  MicroLedModel led;
  led.r_series_ohm = 400;
  led.eta_uw_per_ma = 20.0;
  led.i_dead_a = 1e-5;
  CHECK(led_power_uw(led, 0.0) == 0.0);
  CHECK(led_power_uw(led, 0.5e-5) == 0.0);
  CHECK(led_power_uw(led, 1e-5) == 0.0);
  double p1 = led_power_uw(led, led.i_dead_a + 1e-4);
  double p2 = led_power_uw(led, led.i_dead_a + 2e-4);
  CHECK_THAT(p2, Catch::Matchers::WithinRel(2.0 * p1, 1e-12));
  CHECK_THAT(led_power_uw(led, 1.1e-4), Catch::Matchers::WithinRel(20.0 * 1e-4 * 1e3 * 1.0, 1e-9));
}

TEST_CASE("failure states obey the open/short contracts") {
  MicroLedModel led = reference_led();

  MicroLedModel open_led = make_failed(led, LedState::open_circuit);
  CHECK_THROWS_AS(led_voltage(open_led, 1e-4), ModelError);
  CHECK(led_current(open_led, 4.6) == 0.0);
  CHECK(led_power_uw(open_led, 1e-3) == 0.0);

  MicroLedModel short_led = make_failed(led, LedState::short_circuit);
  CHECK(led_voltage(short_led, 1e-3) == 0.0);
  CHECK_THROWS_AS(led_current(short_led, 1.0), ModelError);
  CHECK(led_power_uw(short_led, 1e-3) == 0.0);

  // Repeated application is idempotent.
  CHECK(make_failed(open_led, LedState::open_circuit).state == LedState::open_circuit);
  CHECK(make_failed(short_led, LedState::short_circuit).state == LedState::short_circuit);
}

TEST_CASE("fit_iv recovers known parameters from noise-free samples") {
  MicroLedModel truth;
  truth.i_sat_a = 3e-11;
  truth.n_vt_v = 0.31;
  truth.r_series_ohm = 450.0;

  std::vector<std::pair<double, double>> pts;
  for (double i = 2e-6; i <= 1e-3; i *= 1.6) pts.emplace_back(led_voltage(truth, i), i);

  IvFit fit = fit_iv(pts);
  CHECK_THAT(fit.i_sat_a, Catch::Matchers::WithinRel(truth.i_sat_a, 0.01));
  CHECK_THAT(fit.n_vt_v, Catch::Matchers::WithinRel(truth.n_vt_v, 0.01));
  CHECK_THAT(fit.r_series_ohm, Catch::Matchers::WithinRel(truth.r_series_ohm, 0.01));
  CHECK(fit.rms_v < 1e-9);
}

TEST_CASE("fit_iv input validation") {
  std::vector<std::pair<double, double>> two{{4.0, 1e-4}, {5.0, 1e-3}};
  CHECK_THROWS_AS(fit_iv(two), ValidationError);

  std::vector<std::pair<double, double>> nonmono{{4.0, 1e-4}, {3.9, 2e-4}, {5.0, 1e-3}};
  CHECK_THROWS_AS(fit_iv(nonmono), ValidationError);

  std::vector<std::pair<double, double>> negi{{4.0, -1e-4}, {4.5, 2e-4}, {5.0, 1e-3}};
  CHECK_THROWS_AS(fit_iv(negi), ValidationError);
}

TEST_CASE("fit through the 5 V / 1 mA anchor lands within 10 mV at 1 mA") {
  MicroLedModel truth = reference_led();
  std::vector<std::pair<double, double>> pts;
  for (double i : {1e-5, 5e-5, 2e-4, 5e-4, 1e-3}) pts.emplace_back(led_voltage(truth, i), i);

  IvFit fit = fit_iv(pts);
  MicroLedModel fitted;
  fitted.i_sat_a = fit.i_sat_a;
  fitted.n_vt_v = fit.n_vt_v;
  fitted.r_series_ohm = fit.r_series_ohm;
  CHECK(std::abs(led_voltage(fitted, 1e-3) - 5.0) < 0.010);
}
