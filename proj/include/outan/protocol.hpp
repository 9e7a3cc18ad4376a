#pragma once

// 16-bit random-access command protocol.
//
// Frame layout (normative for this project; the wire carries MSB first):
//
//   bit 15..11   channel address (5 bits)
//   bit 10..1    DAC code (10 bits)
//   bit 0        don't-care (emitted 0, accepted as either value)
//
// Two serial timings are supported. In standard SPI a frame costs 17 clock
// cycles (one idle cycle while CE is high). In the modified scheme the clock
// and data run continuously and a frame costs exactly 16 cycles. In both
// modes a frame is latched only at the rise of CE.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "outan/common.hpp"

namespace outan {

inline constexpr int kChannelCount = 32;
inline constexpr int kCodeLevels = 1024;
inline constexpr int kFrameBits = 16;
inline constexpr int kStandardFrameCycles = 17;

struct Command {
  uint8_t address = 0;  // 0..31
  uint16_t value = 0;   // 0..1023

  friend bool operator==(const Command&, const Command&) = default;
};

struct Frame {
  uint16_t word = 0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

inline Frame encode_command(Command cmd) {
  if (cmd.address >= kChannelCount)
    throw ValidationError("command address out of range: " + std::to_string(cmd.address));
  if (cmd.value >= kCodeLevels)
    throw ValidationError("command value out of range: " + std::to_string(cmd.value));
  uint16_t word = static_cast<uint16_t>((cmd.address << 11) | (cmd.value << 1));
  return Frame{word};
}

// Total function: every 16-bit word decodes, the don't-care bit is ignored.
inline Command decode_frame(Frame frame) {
  Command cmd;
  cmd.address = static_cast<uint8_t>((frame.word >> 11) & 0x1F);
  cmd.value = static_cast<uint16_t>((frame.word >> 1) & 0x3FF);
  return cmd;
}

enum class SpiMode { standard, modified };

struct CeEdge {
  uint64_t cycle = 0;
  bool rise = false;
};

struct BitStream {
  std::vector<uint8_t> bits;     // data line level per clock cycle
  std::vector<CeEdge> ce_edges;  // in clock-cycle units, ascending
  SpiMode mode = SpiMode::modified;

  uint64_t cycles() const { return bits.size(); }
};

inline BitStream serialize(std::span<const Command> cmds, SpiMode mode) {
  if (cmds.empty()) throw ValidationError("serialize: empty command sequence");
  BitStream stream;
  stream.mode = mode;
  const int frame_cycles = mode == SpiMode::modified ? kFrameBits : kStandardFrameCycles;
  stream.bits.assign(cmds.size() * frame_cycles, 0);
  for (size_t k = 0; k < cmds.size(); ++k) {
    const uint16_t word = encode_command(cmds[k]).word;
    const uint64_t offset = k * frame_cycles;
    for (int bit = 0; bit < kFrameBits; ++bit)
      stream.bits[offset + bit] = static_cast<uint8_t>((word >> (15 - bit)) & 1);
    // Latch pulse: CE rises right after the last data bit of the frame. In
    // standard mode the idle cycle sits under the high CE; in modified mode
    // the next frame's data already occupies the cycle after the rise.
    const uint64_t rise = offset + kFrameBits;
    stream.ce_edges.push_back({rise, true});
    stream.ce_edges.push_back({rise + 1, false});
  }
  return stream;
}

struct FramingError {
  size_t frame_index = 0;
  std::string message;
};

// Frames latched before the malformed one are still returned; the hardware
// would have latched them too.
struct DeserializeResult {
  std::vector<Command> commands;
  std::optional<FramingError> error;

  bool ok() const { return !error.has_value(); }
};

inline DeserializeResult deserialize(const BitStream& stream) {
  DeserializeResult result;
  uint64_t consumed = 0;  // data cycles consumed through the last latch
  for (const CeEdge& edge : stream.ce_edges) {
    if (!edge.rise) continue;
    const uint64_t t = edge.cycle;
    if (t < consumed + kFrameBits || t > stream.cycles()) {
      result.error = FramingError{result.commands.size(),
                                  "CE rise at cycle " + std::to_string(t) +
                                      " before a full 16-bit frame was clocked"};
      return result;
    }
    uint16_t word = 0;
    for (int bit = 0; bit < kFrameBits; ++bit)
      word = static_cast<uint16_t>((word << 1) | (stream.bits[t - kFrameBits + bit] & 1));
    result.commands.push_back(decode_frame(Frame{word}));
    consumed = t;
  }
  // Left-over data cycles with no latch: a frame cut mid-flight. Standard
  // mode legitimately leaves the one idle cycle after the final rise.
  const uint64_t idle_margin = stream.mode == SpiMode::standard ? 1 : 0;
  if (stream.cycles() > consumed + idle_margin) {
    result.error = FramingError{result.commands.size(),
                                "stream ends with " + std::to_string(stream.cycles() - consumed) +
                                    " unlatched data cycles"};
  }
  return result;
}

// Cuts the stream at `cycle`, modeling a link that dies mid-frame.
inline BitStream truncate_stream(const BitStream& stream, uint64_t cycle) {
  BitStream cut;
  cut.mode = stream.mode;
  cut.bits.assign(stream.bits.begin(),
                  stream.bits.begin() + static_cast<ptrdiff_t>(std::min<uint64_t>(cycle, stream.cycles())));
  for (const CeEdge& edge : stream.ce_edges)
    if (edge.cycle <= cut.cycles()) cut.ce_edges.push_back(edge);
  return cut;
}

// --- command CSV: "address,value" header plus one command per line ---------

inline std::string commands_to_csv(std::span<const Command> cmds) {
  std::string out = "address,value\n";
  for (const Command& c : cmds)
    out += std::to_string(c.address) + ',' + std::to_string(c.value) + '\n';
  return out;
}

inline std::vector<Command> commands_from_csv(std::string_view text) {
  std::vector<Command> cmds;
  size_t begin = 0, line_no = 0;
  while (begin < text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(begin, end - begin));
    begin = end + 1;
    ++line_no;
    if (line.empty() || line_no == 1) continue;
    auto f = split_csv(line);
    if (f.size() != 2)
      throw ValidationError("command csv line " + std::to_string(line_no) + ": want 2 fields");
    long a = parse_long(f[0]);
    long v = parse_long(f[1]);
    if (a < 0 || a >= kChannelCount || v < 0 || v >= kCodeLevels)
      throw ValidationError("command csv line " + std::to_string(line_no) + ": out of range");
    cmds.push_back({uint8_t(a), uint16_t(v)});
  }
  return cmds;
}

// --- hex-dump text format: one 4-hex-digit word per line -------------------

inline std::string frames_to_hex(std::span<const Frame> frames) {
  std::string out;
  for (const Frame& f : frames) {
    out += to_hex4(f.word);
    out += '\n';
  }
  return out;
}

inline std::vector<Frame> frames_from_hex(std::string_view text) {
  std::vector<Frame> frames;
  size_t line_no = 0;
  size_t begin = 0;
  while (begin <= text.size()) {
    size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = trim(text.substr(begin, end - begin));
    if (!line.empty()) {
      try {
        frames.push_back(Frame{parse_hex4(line)});
      } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (end == text.size()) break;
    begin = end + 1;
  }
  return frames;
}

}  // namespace outan
