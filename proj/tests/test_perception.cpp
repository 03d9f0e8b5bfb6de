#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "madp/perception.hpp"
#include "madp/rng.hpp"
#include "madp/world.hpp"

using namespace madp;

namespace {

SwarmState state_at(const WorldConfig& cfg, const std::vector<double>& xy) {
  Tensor pos({static_cast<int>(xy.size()) / 2, 2}, std::vector<double>(xy));
  return init_swarm(cfg, pos);
}

// expose the full field to every robot, as if fully explored
void reveal_all(SwarmState& s, const ImportanceField& f) {
  for (auto& known : s.known_idf) known = f.grid;
  for (auto& m : s.explored) std::fill(m.begin(), m.end(), 1);
}

}  // namespace

TEST_CASE("observation window channels") {
  WorldConfig cfg = WorldConfig::desk();
  cfg.num_robots = 1;

  SECTION("unexplored world gives a zero density channel") {
    SwarmState s = state_at(cfg, {70.0, 190.0});
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c) REQUIRE(obs.channels.at3(0, r, c) == 0.0);
  }

  SECTION("robot in the world center sees no boundary and no neighbors") {
    SwarmState s = state_at(cfg, {128.0, 128.0});
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c) {
        REQUIRE(obs.channels.at3(1, r, c) == 0.0);
        REQUIRE(obs.channels.at3(2, r, c) == 0.0);
        REQUIRE(obs.channels.at3(3, r, c) == 0.0);
      }
  }

  SECTION("corner robot sees exactly three out-of-world quadrants") {
    SwarmState s = state_at(cfg, {0.0, 0.0});
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    int ones = 0;
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c) {
        double want = (r >= kObsGrid / 2 && c >= kObsGrid / 2) ? 0.0 : 1.0;
        REQUIRE(obs.channels.at3(1, r, c) == want);
        ones += obs.channels.at3(1, r, c) == 1.0 ? 1 : 0;
      }
    REQUIRE(ones == 3 * (kObsGrid / 2) * (kObsGrid / 2));
    // density is zero wherever the boundary marks out-of-world
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c)
        if (obs.channels.at3(1, r, c) == 1.0) REQUIRE(obs.channels.at3(0, r, c) == 0.0);
  }

  SECTION("density reads the known map at window sample points") {
    // robot placed so the 8 m window cells land exactly on 4 m grid centers
    SwarmState s = state_at(cfg, {130.0, 130.0});
    Rng rng(7);
    ImportanceField f = generate_field(cfg, rng);
    reveal_all(s, f);
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c) {
        double wx = 130.0 - 128.0 + (c + 0.5) * 8.0;
        double wy = 130.0 - 128.0 + (r + 0.5) * 8.0;
        if (wx > cfg.side || wy > cfg.side) continue;
        int ix = static_cast<int>(std::floor(wx / cfg.resolution));
        int iy = static_cast<int>(std::floor(wy / cfg.resolution));
        REQUIRE(obs.channels.at3(0, r, c) == Catch::Approx(f.grid.at(iy, ix)).margin(1e-12));
      }
  }

  SECTION("density channel is translation consistent") {
    WorldConfig big;
    big.side = 1024.0;
    big.resolution = 1.0;
    big.num_robots = 1;
    double delta = 64.0;
    std::vector<GaussFeature> base = {{300.25, 420.5, 45.0, 0.8}, {380.0, 380.0, 52.0, 0.7}};
    std::vector<GaussFeature> moved = base;
    for (auto& f : moved) {
      f.mx += delta;
      f.my += delta;
    }
    ImportanceField f1 = field_from_features(big, base);
    ImportanceField f2 = field_from_features(big, moved);
    SwarmState s1 = state_at(big, {350.0, 400.0});
    SwarmState s2 = state_at(big, {350.0 + delta, 400.0 + delta});
    reveal_all(s1, f1);
    reveal_all(s2, f2);
    CommGraph g1 = comm_graph(s1.positions, big.comm_radius);
    CommGraph g2 = comm_graph(s2.positions, big.comm_radius);
    LocalObservation o1 = build_observation(s1, 0, g1, big);
    LocalObservation o2 = build_observation(s2, 0, g2, big);
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c)
        REQUIRE(o1.channels.at3(0, r, c) ==
                Catch::Approx(o2.channels.at3(0, r, c)).margin(1e-12));
  }
}

TEST_CASE("neighbor splatting") {
  WorldConfig cfg = WorldConfig::desk();
  cfg.num_robots = 3;

  SECTION("one-hop neighbors land in their window cell with normalized offsets") {
    SwarmState s = state_at(cfg, {128.0, 128.0, 148.0, 116.0, 128.0, 130.0});
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    // neighbor 1 at (+20, -12) -> column floor(148/8)=18, row floor(116/8)=14
    REQUIRE(obs.channels.at3(2, 14, 18) == 20.0 / 256.0);
    REQUIRE(obs.channels.at3(3, 14, 18) == -12.0 / 256.0);
    // neighbor 2 at (0, +2) -> column 16, row floor(130/8)=16
    REQUIRE(obs.channels.at3(2, 16, 16) == 0.0);
    REQUIRE(obs.channels.at3(3, 16, 16) == 2.0 / 256.0);
    int nonzero = 0;
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c)
        if (obs.channels.at3(2, r, c) != 0.0 || obs.channels.at3(3, r, c) != 0.0) ++nonzero;
    REQUIRE(nonzero == 2);
  }

  SECTION("colliding neighbors keep the closest one") {
    SwarmState s = state_at(cfg, {128.0, 128.0, 148.0, 128.0, 145.0, 129.0});
    CommGraph g = comm_graph(s.positions, cfg.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, cfg);
    // both neighbors fall in column 18, row 16; (17, 1) is closer than (20, 0)
    REQUIRE(obs.channels.at3(2, 16, 18) == 17.0 / 256.0);
    REQUIRE(obs.channels.at3(3, 16, 18) == 1.0 / 256.0);
  }

  SECTION("robots outside the window or out of comm range are omitted") {
    WorldConfig wide;
    wide.side = 1024.0;
    wide.resolution = 4.0;
    wide.num_robots = 3;
    wide.comm_radius = 200.0;
    // neighbor 1 connected but outside the 128 m half-span; robot 2 out of range
    SwarmState s = state_at(wide, {500.0, 500.0, 680.0, 500.0, 990.0, 500.0});
    CommGraph g = comm_graph(s.positions, wide.comm_radius);
    LocalObservation obs = build_observation(s, 0, g, wide);
    for (int r = 0; r < kObsGrid; ++r)
      for (int c = 0; c < kObsGrid; ++c) {
        REQUIRE(obs.channels.at3(2, r, c) == 0.0);
        REQUIRE(obs.channels.at3(3, r, c) == 0.0);
      }
  }
}

TEST_CASE("perceptual token encoder") {
  ParamStore ps;
  Rng rng(41);
  PerceptionIds ids = perception_init(ps, rng);

  SECTION("zero observation with zero biases encodes to the zero token") {
    Tape tape;
    ForwardPass fp(tape, ps);
    Var z = perception_encode(fp, ids, Tensor::zeros({4, kObsGrid, kObsGrid}));
    REQUIRE(z.shape() == Shape{kTokenDim, 1});
    for (double v : z.val().data) REQUIRE(v == 0.0);
  }

  SECTION("encoding is deterministic and finite on random input") {
    Rng data_rng(5);
    Tensor obs = Tensor::randn({4, kObsGrid, kObsGrid}, data_rng);
    Tape t1, t2;
    ForwardPass f1(t1, ps), f2(t2, ps);
    Var z1 = perception_encode(f1, ids, obs);
    Var z2 = perception_encode(f2, ids, obs);
    REQUIRE(z1.val().data == z2.val().data);
    REQUIRE(z1.val().finite());
    REQUIRE(z1.val().numel() == 32);
  }

  SECTION("mismatched channel shape is rejected") {
    Tape tape;
    ForwardPass fp(tape, ps);
    REQUIRE_THROWS_AS(perception_encode(fp, ids, Tensor::zeros({4, 16, 16})),
                      std::invalid_argument);
  }

  SECTION("gradient of token energy w.r.t. the first kernel matches finite differences") {
    Rng data_rng(11);
    Tensor obs = Tensor::randn({4, kObsGrid, kObsGrid}, data_rng, 0.5);
    auto loss_of = [&](const ParamStore& p) {
      Tape tape;
      ForwardPass fp(tape, p);
      Var z = perception_encode(fp, ids, obs);
      return sum_all(mul(z, z)).val().data[0];
    };
    Tape tape;
    ForwardPass fp(tape, ps);
    Var z = perception_encode(fp, ids, obs);
    Var loss = sum_all(mul(z, z));
    tape.backward(loss);
    Tensor grad = fp[ids.w1].grad();
    const double h = 1e-5;
    ParamStore probe = ps;
    for (std::size_t j = 0; j < grad.data.size(); ++j) {
      double saved = probe.values[static_cast<std::size_t>(ids.w1)].data[j];
      probe.values[static_cast<std::size_t>(ids.w1)].data[j] = saved + h;
      double up = loss_of(probe);
      probe.values[static_cast<std::size_t>(ids.w1)].data[j] = saved - h;
      double dn = loss_of(probe);
      probe.values[static_cast<std::size_t>(ids.w1)].data[j] = saved;
      double fd = (up - dn) / (2 * h);
      double denom = std::max({1e-6, std::abs(fd), std::abs(grad.data[j])});
      REQUIRE(std::abs(fd - grad.data[j]) / denom < 1e-4);
    }
  }
}
