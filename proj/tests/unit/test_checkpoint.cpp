#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ctrl/checkpoint.hpp"
#include "ctrl/error.hpp"
#include "support/synthetic.hpp"

namespace ctrl {
namespace {

using testing::tiny_config;

std::filesystem::path temp_dir(const std::string& name) {
  const char* base = std::getenv("CTRL_TEST_TMP");
  auto dir = std::filesystem::path(base ? base : std::filesystem::temp_directory_path().string()) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::string> vocab_tokens(std::size_t n) {
  std::vector<std::string> v{"<pad>", "<unk>"};
  for (std::size_t i = 2; i < n; ++i) v.push_back("w" + std::to_string(i));
  return v;
}

TEST(Checkpoint, RoundTripIsExact) {
  Model m = Model::build(tiny_config(Variant::kCtrl, 10, 3));
  m.find("ctrl.l2.w_exp")->value[0] = 0.25;
  const auto vocab = vocab_tokens(10);
  const std::string bytes = encode_checkpoint(m, vocab);
  const Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.config, m.config());
  EXPECT_EQ(ck.vocab, vocab);
  ASSERT_EQ(ck.model.params().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const Param& a = *m.params()[i];
    const Param& b = *ck.model.params()[i];
    EXPECT_EQ(a.name, b.name);
    EXPECT_EQ(a.group, b.group);
    EXPECT_EQ(a.trainable, b.trainable);
    EXPECT_EQ(a.value, b.value);
  }
  EXPECT_EQ(encode_checkpoint(ck.model, ck.vocab), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = temp_dir("ckpt_file");
  const Model m = Model::build(tiny_config(Variant::kDanMinusMinus, 6, 4));
  save_checkpoint(m, vocab_tokens(6), dir / "m.ckpt");
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir / "m.ckpt").model, vocab_tokens(6)),
            encode_checkpoint(m, vocab_tokens(6)));
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, AnySingleByteCorruptionIsRejected) {
  const Model m = Model::build(tiny_config(Variant::kCtrl, 6, 4));
  const std::string bytes = encode_checkpoint(m, vocab_tokens(6));
  for (std::size_t pos = 0; pos < bytes.size(); pos += 97) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x5a);
    EXPECT_THROW(decode_checkpoint(bad), CheckpointError) << "byte " << pos;
  }
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), CheckpointError);
  EXPECT_THROW(decode_checkpoint(""), CheckpointError);
}

TEST(Checkpoint, MismatchNamesFirstTensor) {
  Model small = Model::build(tiny_config(Variant::kCtrl, 6, 4));
  ModelConfig other = tiny_config(Variant::kCtrl, 6, 4);
  other.domain_dim = 3;
  const std::string bytes = encode_checkpoint(Model::build(other), vocab_tokens(6));
  try {
    load_params_into(small, bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("emb.domain"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, LoadParamsIntoMatchingModel) {
  Model target = Model::build(tiny_config(Variant::kCtrl, 6, 1));
  const Model source = Model::build(tiny_config(Variant::kCtrl, 6, 2));
  load_params_into(target, encode_checkpoint(source, vocab_tokens(6)));
  EXPECT_EQ(serialize_groups(target, {Group::kCnn, Group::kCtrl, Group::kFc, Group::kEmb}),
            serialize_groups(source, {Group::kCnn, Group::kCtrl, Group::kFc, Group::kEmb}));
}

TEST(SerializeGroups, OnlyCoversRequestedGroups) {
  Model a = Model::build(tiny_config(Variant::kCtrl, 6, 1));
  const std::string cnn = serialize_groups(a, {Group::kCnn});
  const std::string ctrl = serialize_groups(a, {Group::kCtrl});
  a.find("fc.w")->value[0] += 1.0;
  EXPECT_EQ(serialize_groups(a, {Group::kCnn}), cnn);
  EXPECT_EQ(serialize_groups(a, {Group::kCtrl}), ctrl);
  a.find("conv4.b")->value[0] += 1.0;
  EXPECT_NE(serialize_groups(a, {Group::kCnn}), cnn);
}

}  // namespace
}  // namespace ctrl
