// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "rge/checkpoint.hpp"
#include "rge/dataset_io.hpp"
#include "rge/error.hpp"
#include "support/test_util.hpp"

namespace rge {
namespace {

namespace fs = std::filesystem;

class ScratchDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("rge_io_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
  TaskGenerator gen{TaskConfig{}};
};

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::ranges::count(s, '\n')); }

TEST_F(ScratchDir, EmptyDatasetIsHeaderOnly) {
  const auto text = to_jsonl({}, gen.vocab());
  EXPECT_EQ(count_lines(text), 1u);
  EXPECT_TRUE(from_jsonl(text, gen.vocab()).empty());
}

TEST_F(ScratchDir, SingleExampleRoundTrip) {
  const Dataset one{gen.make_example(TaskFamily::kRemove, 3, Split::kEval, kEvalIdBase + 4)};
  write_jsonl(one, gen.vocab(), dir / "one.jsonl");
  EXPECT_EQ(read_jsonl(dir / "one.jsonl", gen.vocab()), one);
}

TEST_F(ScratchDir, LargeRoundTripIsByteIdentical) {
  const auto ds = generate_dataset(gen, 1, 10000, 0).train;
  const auto text = to_jsonl(ds, gen.vocab());
  EXPECT_EQ(count_lines(text), 10001u);
  const auto back = from_jsonl(text, gen.vocab());
  EXPECT_EQ(back, ds);
  EXPECT_EQ(to_jsonl(back, gen.vocab()), text);
}

TEST_F(ScratchDir, FingerprintMismatchIsFormatError) {
  const auto text = to_jsonl({}, gen.vocab());
  EXPECT_THROW(from_jsonl(text, Vocab(VocabSpec{6, 6, 5})), FormatError);
  EXPECT_THROW(from_jsonl("", gen.vocab()), FormatError);
  EXPECT_THROW(from_jsonl("{\"format\":\"other\"}\n", gen.vocab()), FormatError);
}

TEST_F(ScratchDir, MalformedRecordNamesItsLine) {
  const auto ds = generate_dataset(gen, 1, 3, 0).train;
  std::istringstream in(to_jsonl(ds, gen.vocab()));
  std::string header, a, b, c;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  std::getline(in, c);
  const std::vector<std::string> bad_lines = {"{not json", "[1,2]", R"({"example_id":1})",
                                              b.substr(0, b.find("\"query\"")) + "\"query\":[3,\"x\"]}"};
  for (const auto& bad : bad_lines) {
    try {
      from_jsonl(header + "\n" + a + "\n" + bad + "\n" + c + "\n", gen.vocab());
      ADD_FAILURE() << "accepted: " << bad;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
  }
}

TEST_F(ScratchDir, UnreadablePathIsIoError) {
  EXPECT_THROW(read_jsonl(dir / "absent.jsonl", gen.vocab()), IoError);
  write_file(dir / "blocker", "x");
  EXPECT_THROW(write_jsonl({}, gen.vocab(), dir / "blocker" / "d.jsonl"), IoError);
}

template <typename T>
void expect_same_params(const Parameters<T>& a, const Parameters<T>& b) {
  EXPECT_EQ(a.config, b.config);
  const auto na = a.named(), nb = b.named();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].second.shape(), nb[i].second.shape());
    EXPECT_TRUE(std::ranges::equal(na[i].second.data(), nb[i].second.data())) << na[i].first;
  }
}

TEST_F(ScratchDir, CheckpointRoundTripBothPrecisions) {
  const auto pf = init_params<float>(testing::small_model(31, 3));
  save_checkpoint(pf, dir / "f.ckpt");
  expect_same_params(load_checkpoint<float>(dir / "f.ckpt"), pf);
  const auto pd = init_params<double>(testing::small_model(31, 3));
  EXPECT_EQ(serialize_params(deserialize_params<double>(serialize_params(pd))), serialize_params(pd));
}

TEST_F(ScratchDir, CheckpointConvertsPrecision) {
  const auto pf = init_params<float>(testing::tiny_model(31, 3));
  const auto pd = deserialize_params<double>(serialize_params(pf));
  const auto back = deserialize_params<float>(serialize_params(pd));
  expect_same_params(back, pf);
  EXPECT_EQ(pd.token_embedding.data()[5], double(pf.token_embedding.data()[5]));
}

TEST_F(ScratchDir, CorruptCheckpointsAreFormatErrors) {
  const auto bytes = serialize_params(init_params<float>(testing::tiny_model(31)));
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_params<float>(flipped), FormatError);
  EXPECT_THROW(deserialize_params<float>(bytes.substr(0, bytes.size() - 9)), FormatError);
  EXPECT_THROW(deserialize_params<float>(std::string(64, 'x')), FormatError);
  EXPECT_THROW(deserialize_params<float>(""), FormatError);
  EXPECT_THROW(load_checkpoint<float>(dir / "absent.ckpt"), IoError);
}

}  // namespace
}  // namespace rge
