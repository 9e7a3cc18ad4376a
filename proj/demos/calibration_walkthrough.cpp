// Measures the stock probe, builds its calibration table, and prints the
// before/after linearity picture for the weakest channel.

#include <cstdio>

#include "outan/asic.hpp"
#include "outan/calibration.hpp"
#include "outan/probe.hpp"

using namespace outan;

int main() {
  ProbeModel probe = default_probe();
  AsicState asic = powered_on_asic();

  std::printf("probe: %d shanks x %d μLEDs\n", probe.shanks, probe.leds_per_shank);
  for (int ch : probe.connected_channels()) {
    const MicroLedModel& led = probe.led_for_channel(ch);
    double i_comp = led_current(led, asic.v_compliance);
    std::printf("  ch %2d: compliance %.3f mA, max %.2f uW, knee code %d\n", ch, i_comp * 1e3,
                led_power_uw(led, i_comp), saturation_onset_code(asic, ch, led));
  }

  auto curves = measure_ip_curves(asic, probe, 9, /*seed=*/1);
  CalibrationTable table = build_table(curves);
  std::printf("\ntable: target %.4g uW, LSB %.4g nW\n", table.target_max_power_uw,
              table.lsb_uw * 1e3);

  int weak_ch = -1;
  double weak_max = 1e300;
  for (const auto& c : curves)
    if (!c.dead && c.max_power_uw() < weak_max) {
      weak_max = c.max_power_uw();
      weak_ch = c.channel;
    }
  const IPCurve* weak = nullptr;
  for (const auto& c : curves)
    if (c.channel == weak_ch) weak = &c;

  std::vector<double> raw, calibrated;
  for (const auto& s : weak->samples) raw.push_back(s.power_uw);
  for (int row = 0; row < kTableRows; ++row)
    calibrated.push_back(weak->samples[table.rows[size_t(row)][size_t(weak_ch)]].power_uw);

  auto worst = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
  };
  LinearityReport pre = linearity(raw, weak_max / double(kTableRows), weak_ch);
  LinearityReport post = linearity(calibrated, table.lsb_uw, weak_ch, CalibrationPhase::post);
  std::printf("weakest channel %d: pre |DNL| max %.2f LSB, post |INL| max %.2f LSB\n", weak_ch,
              worst(pre.dnl), worst(post.inl));
  return 0;
}
