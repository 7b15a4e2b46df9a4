#include "cgnet/checkpoint.hpp"
#include "cgnet/errors.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace cgnet;
using testutil::TempDir;

namespace {

NetworkConfig small() {
  NetworkConfig c;
  c.M = 2;
  c.N = 2;
  c.num_classes = 5;
  c.channels = {8, 16, 32};
  c.sur_mode = SurMode::kSingle;
  c.residual = Residual::kLocal;
  c.interchannel_1x1 = true;
  return c;
}

TrainState state() {
  TrainState s;
  s.iter = 37;
  s.adam_t = 37;
  s.seed = 0x0123456789abcdefULL;
  s.means = {101.5f, 99.25f, 87.125f};
  return s;
}

}  // namespace

TEST_CASE("save, load, save is byte-identical and restores everything") {
  TempDir dir("ckpt");
  CGNet<float> net(small(), 3);
  Rng rng(1);
  for (auto& p : net.store())
    if (p.learnable()) {
      p.adam_m = rand_normal<float>(rng, p.value.dims(), 0, 1);
      p.adam_v = rand_normal<float>(rng, p.value.dims(), 1, 0.1);
    }
  net.train(rand_normal<float>(rng, Dims{2, 3, 16, 16}, 0, 1));  // move running stats
  save_checkpoint((dir / "a.cgn").string(), net, state());
  const Checkpoint ck = read_checkpoint((dir / "a.cgn").string());
  const CGNet<float> back = restore_model(ck);
  save_checkpoint((dir / "b.cgn").string(), back, checkpoint_state(ck));
  CHECK(testutil::read_bytes(dir / "a.cgn") == testutil::read_bytes(dir / "b.cgn"));

  CHECK(back.store().fingerprint() == net.store().fingerprint());
  for (std::size_t i = 0; i < net.store().size(); ++i) {
    const auto& p = net.store()[i];
    if (!p.learnable()) continue;
    CHECK((p.adam_m.array() == back.store()[i].adam_m.array()).all());
    CHECK((p.adam_v.array() == back.store()[i].adam_v.array()).all());
  }
  const TrainState s = checkpoint_state(ck);
  CHECK(s.iter == 37);
  CHECK(s.adam_t == 37);
  CHECK(s.seed == 0x0123456789abcdefULL);
  CHECK(s.means == state().means);
  const NetworkConfig c = checkpoint_config(ck);
  CHECK(c.sur_mode == SurMode::kSingle);
  CHECK(c.residual == Residual::kLocal);
  CHECK(c.interchannel_1x1);
  CHECK(c.channels == small().channels);
}

TEST_CASE("file layout") {
  Checkpoint ck;
  ck.records.push_back({"w", Dims{2}, {1.0f, -2.0f}});
  const auto b = encode_checkpoint(ck);
  // magic, version, count, name len, name, dtype, rank, dim, payload, footer
  REQUIRE(b.size() == 4 + 4 + 4 + 2 + 1 + 1 + 1 + 4 + 8 + 8);
  CHECK(std::string(b.begin(), b.begin() + 4) == "CGN1");
  CHECK(b[4] == 1);
  CHECK(b[8] == 1);
  CHECK(b[12] == 1);
  CHECK(b[14] == 'w');
  CHECK(b[15] == 0);
  CHECK(b[16] == 1);
  CHECK(b[17] == 2);
  // 1.0f = 0x3f800000 little-endian
  CHECK(b[21] == 0x00);
  CHECK(b[24] == 0x3f);
  CHECK(b[23] == 0x80);
  std::uint64_t footer = 0;
  for (int k = 0; k < 8; ++k) footer |= static_cast<std::uint64_t>(b[b.size() - 8 + static_cast<std::size_t>(k)]) << (8 * k);
  CHECK(footer == fnv1a64(b.data(), b.size() - 8));
  // FNV-1a-64 reference value for "a"
  const std::uint8_t a = 'a';
  CHECK(fnv1a64(&a, 1) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("corruption and malformed files are detected") {
  const CGNet<float> net(small(), 3);
  const auto good = encode_checkpoint(make_checkpoint(net, state()));
  SUBCASE("payload byte flip") {
    auto b = good;
    b[b.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(b), ChecksumError);
  }
  SUBCASE("footer byte flip") {
    auto b = good;
    b.back() ^= 0x80;
    CHECK_THROWS_AS(decode_checkpoint(b), ChecksumError);
  }
  SUBCASE("truncation") {
    for (std::size_t keep : {std::size_t{3}, std::size_t{30}, good.size() / 2, good.size() - 1}) {
      const std::vector<std::uint8_t> b(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
      CHECK_THROWS_AS(decode_checkpoint(b), FormatError);
    }
  }
  SUBCASE("magic and version") {
    auto b = good;
    b[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_checkpoint(b), doctest::Contains("magic"), FormatError);
    b = good;
    b[4] = 2;
    CHECK_THROWS_WITH_AS(decode_checkpoint(b), doctest::Contains("version"), FormatError);
  }
  SUBCASE("dims overrunning the file") {
    Checkpoint ck;
    ck.records.push_back({"w", Dims{2}, {1.0f, 2.0f}});
    auto b = encode_checkpoint(ck);
    b[17] = 0xff;
    b[18] = 0xff;
    b[19] = 0xff;
    b[20] = 0x7f;
    CHECK_THROWS_WITH_AS(decode_checkpoint(b), doctest::Contains("overrun"), FormatError);
  }
}

TEST_CASE("missing or mismatched tensors are named") {
  const CGNet<float> net(small(), 3);
  Checkpoint ck = make_checkpoint(net, state());
  Checkpoint missing = ck;
  std::erase_if(missing.records, [](const CheckpointRecord& r) { return r.name == "stage3.1.sur.weight"; });
  CHECK_THROWS_WITH(restore_model(missing), doctest::Contains("stage3.1.sur.weight"));

  Checkpoint extra = ck;
  extra.records.push_back({"stray.weight", Dims{1}, {0.f}});
  CHECK_THROWS_WITH(restore_model(extra), doctest::Contains("stray.weight"));

  NetworkConfig other = small();
  other.num_classes = 6;
  CGNet<float> wrong(other, 1);
  CHECK_THROWS_WITH(load_into(wrong, ck), doctest::Contains("head.classifier"));
}

TEST_CASE("unreadable path") {
  CHECK_THROWS(read_checkpoint("/nonexistent/dir/x.cgn"));
  const CGNet<float> net(small(), 3);
  CHECK_THROWS(save_checkpoint("/nonexistent/dir/x.cgn", net, state()));
}
