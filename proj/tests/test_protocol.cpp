#include <catch2/catch_amalgamated.hpp>

#include <string>

#include "outan/protocol.hpp"
#include "outan/rng.hpp"

using namespace outan;

namespace {

// Independent oracle: build the 16-bit word by string concatenation of the
// address and value bit patterns, then parse it back as binary.
uint16_t concat_oracle(unsigned address, unsigned value) {
  std::string bits;
  for (int i = 4; i >= 0; --i) bits += ((address >> i) & 1) ? '1' : '0';
  for (int i = 9; i >= 0; --i) bits += ((value >> i) & 1) ? '1' : '0';
  bits += '0';  // don't-care
  uint16_t word = 0;
  for (char c : bits) word = static_cast<uint16_t>((word << 1) | (c == '1'));
  return word;
}

}  // namespace

TEST_CASE("encode_command matches the bit-concatenation oracle") {
  CHECK(encode_command({0, 0}).word == 0x0000);
  CHECK(encode_command({31, 1023}).word == 0xFFFE);
  CHECK(concat_oracle(5, 300) == 0x2A58);
  CHECK(encode_command({5, 300}).word == 0x2A58);

  for (unsigned a = 0; a < 32; a += 3)
    for (unsigned v = 0; v < 1024; v += 17)
      CHECK(encode_command({uint8_t(a), uint16_t(v)}).word == concat_oracle(a, v));
}

TEST_CASE("encode_command rejects out-of-range fields") {
  CHECK_THROWS_AS(encode_command({32, 0}), ValidationError);
  CHECK_THROWS_AS(encode_command({0, 1024}), ValidationError);
}

TEST_CASE("decode_frame inverts encode and ignores the don't-care bit") {
  CHECK(decode_frame(Frame{0x0000}) == Command{0, 0});
  CHECK(decode_frame(Frame{0xFFFF}) == Command{31, 1023});
  CHECK(decode_frame(Frame{0x2A58}) == Command{5, 300});

  // Exhaustive round trip over the full 32 x 1024 command space.
  for (unsigned a = 0; a < 32; ++a) {
    for (unsigned v = 0; v < 1024; ++v) {
      Command cmd{uint8_t(a), uint16_t(v)};
      REQUIRE(decode_frame(encode_command(cmd)) == cmd);
    }
  }

  // Flipping bit 0 never changes the decode result.
  for (uint32_t word = 0; word <= 0xFFFF; ++word)
    REQUIRE(decode_frame(Frame{uint16_t(word)}) == decode_frame(Frame{uint16_t(word ^ 1)}));
}

TEST_CASE("serialize cycle counts: 16 per frame modified, 17 standard") {
  std::vector<Command> one{{3, 77}};
  CHECK(serialize(one, SpiMode::modified).cycles() == 16);
  CHECK(serialize(one, SpiMode::standard).cycles() == 17);

  Rng rng(42);
  for (size_t n : {2u, 5u, 64u, 321u}) {
    std::vector<Command> cmds;
    for (size_t i = 0; i < n; ++i)
      cmds.push_back({uint8_t(rng.uniform_int(0, 31)), uint16_t(rng.uniform_int(0, 1023))});
    auto modified = serialize(cmds, SpiMode::modified);
    auto standard = serialize(cmds, SpiMode::standard);
    CHECK(modified.cycles() == 16 * n);
    CHECK(standard.cycles() == 17 * n);
    // Exactly the quoted 1/17 saving.
    CHECK(modified.cycles() * 17 == standard.cycles() * 16);
  }

  CHECK_THROWS_AS(serialize({}, SpiMode::modified), ValidationError);
}

TEST_CASE("deserialize round-trips both modes") {
  Rng rng(7);
  std::vector<Command> cmds;
  for (int i = 0; i < 200; ++i)
    cmds.push_back({uint8_t(rng.uniform_int(0, 31)), uint16_t(rng.uniform_int(0, 1023))});

  for (SpiMode mode : {SpiMode::modified, SpiMode::standard}) {
    auto result = deserialize(serialize(cmds, mode));
    REQUIRE(result.ok());
    CHECK(result.commands == cmds);
  }
}

TEST_CASE("deserialize flags truncated frames with the frame index") {
  std::vector<Command> cmds{{1, 2}, {3, 4}, {5, 6}};
  auto stream = serialize(cmds, SpiMode::modified);

  SECTION("cut after 10 bits of the first frame") {
    auto result = deserialize(truncate_stream(stream, 10));
    REQUIRE_FALSE(result.ok());
    CHECK(result.error->frame_index == 0);
    CHECK(result.commands.empty());
  }

  SECTION("cut mid third frame keeps the first two commands") {
    auto result = deserialize(truncate_stream(stream, 16 * 2 + 5));
    REQUIRE_FALSE(result.ok());
    CHECK(result.error->frame_index == 2);
    REQUIRE(result.commands.size() == 2);
    CHECK(result.commands[0] == cmds[0]);
    CHECK(result.commands[1] == cmds[1]);
  }

  SECTION("premature CE rise is a framing error") {
    BitStream bad = stream;
    bad.ce_edges.insert(bad.ce_edges.begin(), {8, true});
    auto result = deserialize(bad);
    REQUIRE_FALSE(result.ok());
    CHECK(result.error->frame_index == 0);
  }
}

TEST_CASE("command csv round-trips and validates ranges") {
  std::vector<Command> cmds{{0, 0}, {5, 300}, {31, 1023}};
  std::string csv = commands_to_csv(cmds);
  CHECK(csv == "address,value\n0,0\n5,300\n31,1023\n");
  CHECK(commands_from_csv(csv) == cmds);
  CHECK(commands_from_csv("address,value\n").empty());
  CHECK_THROWS_AS(commands_from_csv("address,value\n32,0\n"), ValidationError);
  CHECK_THROWS_AS(commands_from_csv("address,value\n1\n"), ValidationError);
}

TEST_CASE("hex dump format round-trips and reports bad lines") {
  std::vector<Frame> frames{Frame{0x0000}, Frame{0x2A58}, Frame{0xFFFE}};
  std::string text = frames_to_hex(frames);
  CHECK(text == "0000\n2A58\nFFFE\n");
  CHECK(frames_from_hex(text) == frames);
  CHECK(frames_from_hex("").empty());

  try {
    frames_from_hex("0000\nZZ00\n");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}
