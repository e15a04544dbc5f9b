#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mimco/checkpoint.hpp"
#include "support/toy.hpp"

using namespace mimco;
using namespace mimco::testing;
namespace fs = std::filesystem;

namespace {

std::string temp(const std::string& name) { return (fs::temp_directory_path() / ("mimco_ckpt_" + name)).string(); }

TrainState trained_state() {
  auto s = make_train_state(toy_config(), 7);
  s.step = 42;
  s.params.encoder.patch.weight.data[0] = 0.125f;
  s.m.classifier.bias.data[1] = -3.f;
  s.v.decoder.head.bias.data[2] = 9.f;
  s.rng[Stream::kMask]();
  s.epoch_order = {3, 1, 2, 0};
  return s;
}

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveByteIdentical) {
  const auto s = trained_state();
  const auto path = temp("roundtrip.mimc");
  save_checkpoint(s, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(s));
  EXPECT_EQ(back.step, 42u);
  EXPECT_EQ(back.epoch_order, s.epoch_order);
  EXPECT_TRUE(back.rng == s.rng);
  EXPECT_EQ(back.params.config, s.params.config);
  fs::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(trained_state());
  EXPECT_EQ(bytes.substr(0, 4), "MIMC");
  io::Reader r(bytes, "mem");
  r.bytes(4);
  EXPECT_EQ(r.u32(), kCheckpointVersion);
  const auto count = r.u32();
  const auto name = r.bytes(r.u16());
  EXPECT_EQ(name, "encoder.patch.weight");
  EXPECT_EQ(r.u8(), 2);  // rank
  EXPECT_EQ(r.u32(), 192u);
  EXPECT_EQ(r.u32(), 8u);
  EXPECT_EQ(r.u8(), 0);  // f32
  EXPECT_EQ(r.f32(), 0.125f);
  EXPECT_GT(count, 3 * trained_state().params.list().size());
}

TEST(Checkpoint, CorruptMagic) {
  auto bytes = encode_checkpoint(trained_state());
  bytes[1] = 'X';
  const auto msg = error_of([&] { decode_checkpoint(io::Reader(bytes, "corrupt.mimc")); });
  EXPECT_NE(msg.find("bad magic"), std::string::npos) << msg;
  EXPECT_THROW(decode_checkpoint(io::Reader(bytes, "corrupt.mimc")), FormatError);
}

TEST(Checkpoint, Truncated) {
  const auto bytes = encode_checkpoint(trained_state());
  EXPECT_THROW(decode_checkpoint(io::Reader(bytes.substr(0, bytes.size() / 2), "short")), FormatError);
}

TEST(Checkpoint, WrongVocabularyNamesDecoderHead) {
  const auto bytes = encode_checkpoint(trained_state());
  auto cfg = toy_config();
  cfg.decoder.vocab = 16;
  try {
    decode_checkpoint(io::Reader(bytes, "v.mimc"), cfg);
    FAIL() << "expected CheckpointMismatch";
  } catch (const CheckpointMismatch& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("decoder.head.weight (stored [8x8], expected [8x16])"), std::string::npos) << msg;
    EXPECT_NE(msg.find("decoder.head.bias"), std::string::npos) << msg;
    EXPECT_EQ(msg.find("encoder."), std::string::npos) << msg;
  }
}

TEST(Checkpoint, DepthMismatchListsMissingAndUnexpected) {
  const auto bytes = encode_checkpoint(trained_state());
  auto shallower = toy_config();
  shallower.encoder.depth = 1;
  try {
    decode_checkpoint(io::Reader(bytes, "d.mimc"), shallower);
    FAIL();
  } catch (const CheckpointMismatch& e) {
    bool unexpected = false;
    for (const auto& n : e.names()) unexpected = unexpected || n.starts_with("encoder.block1.ln1.gain (unexpected)");
    EXPECT_TRUE(unexpected) << e.what();
  }
  auto deeper = toy_config();
  deeper.encoder.depth = 3;
  const auto msg = error_of([&] { decode_checkpoint(io::Reader(bytes, "d.mimc"), deeper); });
  EXPECT_NE(msg.find("encoder.block2.attn.qkv.weight (missing)"), std::string::npos) << msg;
}

TEST(Checkpoint, MissingFile) {
  EXPECT_THROW(load_checkpoint(temp("does_not_exist.mimc")), FormatError);
}

TEST(Checkpoint, TrailingBytes) {
  const auto bytes = encode_checkpoint(trained_state()) + "x";
  EXPECT_THROW(decode_checkpoint(io::Reader(bytes, "t")), FormatError);
}
