#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "simseg/checkpoint.hpp"
#include "simseg/losses.hpp"
#include "simseg/network.hpp"
#include "simseg/ops.hpp"
#include "test_util.hpp"

using namespace simseg;
using simseg::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

Tensor replicate(const Tensor& slice, int depth) {
  Tensor out({slice.n(), depth, slice.h(), slice.w()});
  for (int n = 0; n < slice.n(); ++n)
    for (int c = 0; c < depth; ++c)
      std::copy_n(slice.plane(n, 0), slice.shape().plane(), out.plane(n, c));
  return out;
}

std::map<std::string, Tensor> by_name(SegNetwork& net) {
  std::map<std::string, Tensor> m;
  for (auto& [name, v] : net.parameters()) m[name] = v.value();
  return m;
}

}  // namespace

TEST_CASE("configuration invariants") {
  NetworkConfig c = NetworkConfig::stack_25d(true);
  CHECK(c.stack_depth == 3);
  CHECK_NOTHROW(c.validate());
  c.stack_depth = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  NetworkConfig d = NetworkConfig::slice_2d();
  CHECK(d.stack_depth == 1);
  CHECK_FALSE(d.use_sim);
  d.use_sim = true;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  NetworkConfig e = NetworkConfig::stack_25d(false);
  e.depth = 1;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  CHECK(parse_input_mode("2.5d") == InputMode::stack25d);
  CHECK(to_string(InputMode::slice2d) == "2d");
  CHECK_THROWS_AS(parse_fusion_kind("attention"), ConfigError);
}

TEST_CASE("first layers follow the stack depth") {
  SegNetwork n25 = build_network(NetworkConfig::stack_25d(true), 1);
  SegNetwork n2 = build_network(NetworkConfig::slice_2d(), 1);
  auto p25 = by_name(n25);
  auto p2 = by_name(n2);
  CHECK(p25.at("pet.enc0.conv1.weight").shape().c == 3);
  CHECK(p25.at("ct.enc0.conv1.weight").shape().c == 3);
  CHECK(p2.at("pet.enc0.conv1.weight").shape().c == 1);
  CHECK(p25.count("pet.sim0.w1") == 1);
  for (const auto& [name, t] : p2) CHECK(name.find("sim") == std::string::npos);
  CHECK(n25.parameter_count() > n2.parameter_count());
}

TEST_CASE("construction is deterministic in the seed") {
  const NetworkConfig cfg = NetworkConfig::stack_25d(true);
  CHECK(build_network(cfg, 4).checksum() == build_network(cfg, 4).checksum());
  CHECK(build_network(cfg, 4).checksum() != build_network(cfg, 5).checksum());
}

TEST_CASE("forward shapes, finiteness and determinism") {
  SegNetwork net = build_network(NetworkConfig::stack_25d(true), 2);
  Rng rng(1);
  const Tensor pet = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor ct = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor a = forward(net, pet, ct);
  CHECK(a.shape() == Shape4{2, 1, 32, 32});
  CHECK(a.all_finite());
  CHECK(forward(net, pet, ct).vector() == a.vector());
  CHECK(forward(net, Tensor({1, 3, 16, 16}), Tensor({1, 3, 16, 16})).all_finite());
  CHECK_THROWS_AS(forward(net, pet, Tensor({2, 3, 32, 16})), InputError);
  CHECK_THROWS_AS(forward(net, Tensor({2, 1, 32, 32}), Tensor({2, 1, 32, 32})),
                  InputError);
  CHECK_THROWS_AS(forward(net, Tensor({1, 3, 30, 30}), Tensor({1, 3, 30, 30})),
                  InputError);
}

TEST_CASE("every parameter receives gradient") {
  for (auto placement : {SimPlacement::input, SimPlacement::all_encoder_stages})
    for (auto fusion : {FusionKind::concat, FusionKind::sum}) {
      NetworkConfig cfg = NetworkConfig::stack_25d(true);
      cfg.sim_placement = placement;
      cfg.fusion = fusion;
      SegNetwork net = build_network(cfg, 3);
      Rng rng(2);
      const auto pet = ag::constant(random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
      const auto ct = ag::constant(random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0));
      Tensor y({1, 1, 16, 16});
      for (int r = 4; r < 11; ++r)
        for (int c = 5; c < 12; ++c) y(0, 0, r, c) = 1.0;
      ag::backward(composite_loss(ag::sigmoid(net.forward(pet, ct, true)), y));
      for (auto& [name, v] : net.parameters()) {
        INFO(name);
        REQUIRE_FALSE(v.grad().empty());
        double norm = 0.0;
        for (double g : v.grad().values()) norm += g * g;
        CHECK(std::sqrt(norm) > 1e-12);
      }
    }
}

TEST_CASE("predict_mask thresholds sigmoid probabilities") {
  Tensor l({1, 1, 1, 4}, std::vector<double>{3.0, -3.0, 0.0, -1e-9});
  CHECK(predict_mask(l).vector() == std::vector<double>{1, 0, 1, 0});
  CHECK(predict_mask(l, 1.0).sum() == 0.0);
  CHECK(predict_mask(l, 0.9).vector() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("modality split follows the stack layout") {
  Tensor s({1, 6, 2, 2});
  for (int c = 0; c < 6; ++c)
    for (int i = 0; i < 4; ++i) s.plane(0, c)[i] = c;
  const auto [pet, ct] = split_modalities(s, 3);
  CHECK(ct(0, 0, 0, 0) == 0.0);
  CHECK(ct(0, 2, 1, 1) == 2.0);
  CHECK(pet(0, 0, 0, 0) == 3.0);
  CHECK(pet(0, 2, 0, 1) == 5.0);
}

TEST_CASE("inflation copies, replicates and preserves the function") {
  SegNetwork net2d = build_network(NetworkConfig::slice_2d(), 7);
  NetworkConfig cfg = NetworkConfig::stack_25d(true);
  cfg.sim.alpha = cfg.sim.beta = cfg.sim.gamma = 0.0;
  SegNetwork net25 = inflate_2d_to_25d(net2d, cfg, 9);
  auto p2 = by_name(net2d);
  auto p25 = by_name(net25);
  for (const auto& [name, t] : p2) {
    INFO(name);
    if (name.find("enc0.conv1") != std::string::npos) {
      const Tensor& w = p25.at(name);
      for (int o = 0; o < w.n(); ++o)
        for (int k = 0; k < 3; ++k)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              CHECK(w(o, k, i, j) == t(o, 0, i, j) / 3.0);
    } else {
      CHECK(p25.at(name).vector() == t.vector());
    }
  }

  Rng rng(3);
  const Tensor pet = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  const Tensor ct = random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  const Tensor a = forward(net2d, pet, ct);
  const Tensor b = forward(net25, replicate(pet, 3), replicate(ct, 3));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-5);

  SegNetwork other = inflate_2d_to_25d(net2d, cfg, 10);
  CHECK(by_name(other).at("pet.sim0.w1").vector() != p25.at("pet.sim0.w1").vector());
}

TEST_CASE("inflation rejects incompatible architectures") {
  SegNetwork net2d = build_network(NetworkConfig::slice_2d(), 1);
  NetworkConfig wide = NetworkConfig::stack_25d(true);
  wide.base_width = 4;
  CHECK_THROWS_AS(inflate_2d_to_25d(net2d, wide, 1), TransplantError);
  SegNetwork n25 = build_network(NetworkConfig::stack_25d(true), 1);
  CHECK_THROWS_AS(inflate_2d_to_25d(n25, NetworkConfig::stack_25d(true), 1),
                  TransplantError);
}

TEST_CASE("clone is independent") {
  SegNetwork a = build_network(NetworkConfig::stack_25d(true), 1);
  SegNetwork b = a.clone();
  CHECK(a.checksum() == b.checksum());
  b.parameters().front().second.mutable_value()[0] += 1.0;
  CHECK(a.checksum() != b.checksum());
}

TEST_CASE("checkpoint round trip") {
  NetworkConfig cfg = NetworkConfig::stack_25d(true);
  cfg.norm = NormKind::batch;
  cfg.sim.norm = NormKind::batch;
  SegNetwork net = build_network(cfg, 5);
  Rng rng(4);
  const Tensor pet = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  const Tensor ct = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  net.forward(ag::constant(pet), ag::constant(ct), true);  // move running stats

  const fs::path path = fs::temp_directory_path() / "simseg_test_ckpt.bin";
  save_checkpoint(make_checkpoint(net, {"finetune", 3, 0.42, 11}), path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.meta.stage == "finetune");
  CHECK(back.meta.epoch == 3);
  CHECK(back.meta.best_val_iou == 0.42);
  CHECK(back.config.norm == NormKind::batch);
  SegNetwork restored = restore_network(back);
  CHECK(restored.checksum() == net.checksum());
  CHECK(forward(restored, pet, ct).vector() == forward(net, pet, ct).vector());

  // Corrupt the version field.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(path.string() + ".missing"), CheckpointError);
  fs::remove(path);

  SegNetwork small = build_network(NetworkConfig::slice_2d(), 1);
  CHECK_THROWS_AS(load_into(small, make_checkpoint(net, {})), CheckpointError);
}
