#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "ringtc/spectral.hpp"

using namespace ringtc;

namespace {

ManyBodyState random_block_state(const ModelParams& p, std::vector<int> ks, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  ManyBodyState s(p.N, p.window);
  for (int k : ks) {
    auto& b = s.add_block(k);
    for (Eigen::Index i = 0; i < b.amp.size(); ++i) b.amp[i] = Complex(g(rng), g(rng));
  }
  s.normalize();
  return s;
}

PropagatorConfig krylov_cfg() {
  PropagatorConfig c;
  c.method = PropagatorMethod::kKrylov;
  return c;
}

PropagatorConfig eigen_cfg() {
  PropagatorConfig c;
  c.method = PropagatorMethod::kEigenbasis;
  return c;
}

}  // namespace

TEST(GroundOfSector, FreeZeroMomentum) {
  ModelParams p;
  p.N = 6;
  p.window = {-2, 4};
  const auto g = ground_of_sector(p, 0);
  EXPECT_NEAR(g.energy, 0.0, 1e-10);
  EXPECT_NEAR(fidelity(g.vector, ManyBodyState::fock({{0, 0, 6, 0, 0, 0, 0}}, p.window)), 1.0,
              1e-12);
}

TEST(GroundOfSector, FreeMovingSector) {
  ModelParams p;
  p.N = 8;
  p.window = {-2, 4};
  const auto g = ground_of_sector(p, 8);
  EXPECT_NEAR(g.energy, 2.0 * kPi * kPi * 8, 1e-9);
  EXPECT_NEAR(fidelity(g.vector, ManyBodyState::fock({{0, 0, 0, 8, 0, 0, 0}}, p.window)), 1.0,
              1e-12);
}

TEST(GroundOfSector, MatchesDenseDiagonalization) {
  for (int n = 2; n <= 4; ++n) {
    const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
    for (int k : {0, n, 2 * n - 1}) {
      auto basis = sector_basis(n, k, p.window);
      const auto g = ground_of_sector(basis, p, 1e-11);
      const auto dense = spectrum_of_sector(*basis, p);
      EXPECT_NEAR(g.energy, dense.eigenvalues[0], 1e-10) << "N=" << n << " K=" << k;
      EXPECT_LT(g.residual, 1e-11);
    }
  }
}

TEST(GroundOfSector, ResidualAndNormalization) {
  const auto p = ModelParams::from_gN(-15.0, 12, {-2, 4});
  const auto g = ground_of_sector(p, 12, 1e-9);
  EXPECT_NEAR(g.vector.norm2(), 1.0, 1e-12);
  const auto hv = apply_hamiltonian(g.vector, p);
  const auto r = linear_combination(1.0, hv, -g.energy, g.vector);
  EXPECT_LT(r.norm(), 1e-9);
}

TEST(GroundOfSector, VariationalBound) {
  const auto p = ModelParams::from_gN(-15.0, 7, {-2, 4});
  const auto g = ground_of_sector(p, 7);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto v = random_block_state(p, {7}, seed);
    EXPECT_LE(g.energy, energy_expectation(v, p) + 1e-12);
  }
}

TEST(GroundOfSector, EmptySectorIsContractViolation) {
  const auto p = ModelParams::from_gN(-1.0, 2, {0, 1});
  EXPECT_THROW(ground_of_sector(p, 5), ContractViolation);
}

TEST(GroundOfSector, NonConvergenceReportsResidual) {
  const auto p = ModelParams::from_gN(-15.0, 10, {-2, 4});
  LanczosOptions opt;
  opt.max_basis = 3;
  opt.max_restarts = 1;
  try {
    ground_of_sector(sector_basis(10, 10, p.window), p, 1e-13, opt);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence& e) {
    EXPECT_GT(e.best_residual(), 1e-13);
  }
}

TEST(AlphaInvariance, EigenvectorsAndEnergyShift) {
  const ModeWindow w{-2, 4};
  for (int n : {3, 6}) {
    for (int k : {0, n, n + 2}) {
      const auto p0 = ModelParams::from_gN(-15.0, n, w, 0.0);
      const auto g0 = ground_of_sector(p0, k, 1e-11);
      for (double alpha : {0.7, kTwoPi}) {
        const auto pa = ModelParams::from_gN(-15.0, n, w, alpha);
        const auto ga = ground_of_sector(pa, k, 1e-11);
        EXPECT_GT(fidelity(g0.vector, ga.vector), 1.0 - 1e-12);
        EXPECT_NEAR(ga.energy, g0.energy - alpha * kTwoPi * k + n * alpha * alpha / 2, 1e-9);
      }
    }
  }
}

TEST(Boost, GalileanShiftOfGroundState) {
  const int n = 5;
  const auto p_rest = ModelParams::from_gN(-15.0, n, {-3, 3});
  const auto p_moving = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto rest = ground_of_sector(p_rest, 0, 1e-11);
  const auto moving = ground_of_sector(p_moving, n, 1e-11);
  const auto boosted = apply_boost(rest.vector, 1, p_moving.window);
  EXPECT_EQ(boosted.leaked_norm2, 0.0);
  EXPECT_GT(fidelity(boosted.state, moving.vector), 1.0 - 1e-12);
  EXPECT_NEAR(moving.energy, rest.energy + 2.0 * kPi * kPi * n, 1e-9);
  // Interaction energy is unchanged by the shift.
  auto free_rest = p_rest;
  free_rest.g0 = 0;
  auto free_moving = p_moving;
  free_moving.g0 = 0;
  const double int_rest = rest.energy - energy_expectation(rest.vector, free_rest);
  const double int_moving = moving.energy - energy_expectation(moving.vector, free_moving);
  EXPECT_NEAR(int_rest, int_moving, 1e-9);
}

TEST(SpectrumOfSector, TwoByTwoClosedForm) {
  ModelParams p;
  p.N = 2;
  p.window = {-1, 1};
  p.g0 = -0.9;
  const auto s = spectrum_of_sector(enumerate_sector(2, 0, p.window), p);
  const double a = p.g0;
  const double d = 4.0 * kPi * kPi + 2.0 * p.g0;
  const double b = p.g0 * std::sqrt(2.0);
  const double mean = 0.5 * (a + d);
  const double half = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  EXPECT_NEAR(s.eigenvalues[0], mean - half, 1e-12);
  EXPECT_NEAR(s.eigenvalues[1], mean + half, 1e-12);
}

TEST(SpectrumOfSector, FreeEigenvaluesAreKineticEnergies) {
  ModelParams p;
  p.N = 4;
  p.window = {-2, 4};
  const auto basis = enumerate_sector(4, 4, p.window);
  const auto s = spectrum_of_sector(basis, p);
  std::vector<double> kin;
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const auto occ = basis.state(i);
    double e = 0.0;
    for (int j = 0; j < p.window.size(); ++j) e += occ.n[j] * 0.5 * std::pow(kTwoPi * p.window.mode(j), 2);
    kin.push_back(e);
  }
  std::sort(kin.begin(), kin.end());
  for (std::size_t i = 0; i < kin.size(); ++i) EXPECT_NEAR(s.eigenvalues[static_cast<Eigen::Index>(i)], kin[i], 1e-9);
}

TEST(SpectrumOfSector, TraceAndReconstruction) {
  const auto p = ModelParams::from_gN(-15.0, 6, {-2, 4});
  const auto basis = sector_basis(6, 6, p.window);
  const auto s = spectrum_of_sector(*basis, p);
  BlockOperator op(basis, p, false);
  const Eigen::MatrixXd m = op.dense();
  EXPECT_NEAR(s.eigenvalues.sum(), m.trace(), 1e-9);
  const Eigen::MatrixXd rec =
      s.eigenvectors * s.eigenvalues.asDiagonal() * s.eigenvectors.transpose();
  EXPECT_LT((rec - m).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SpectrumOfSector, RefusesOverBudget) {
  const auto p = ModelParams::from_gN(-15.0, 10, {-2, 4});
  EXPECT_THROW(spectrum_of_sector(*sector_basis(10, 10, p.window), p, 50), BudgetExceeded);
}

TEST(Evolve, EigenstateOnlyAcquiresPhase) {
  const auto p = ModelParams::from_gN(-15.0, 8, {-2, 4});
  const auto g = ground_of_sector(p, 8, 1e-11);
  for (const auto& cfg : {krylov_cfg(), eigen_cfg()}) {
    const double t = 0.37;
    const auto out = evolve(g.vector, p, t, cfg);
    EXPECT_NEAR(fidelity(out, g.vector), 1.0, 1e-10);
    const Complex overlap = inner(g.vector, out);
    EXPECT_NEAR(std::abs(overlap - std::polar(1.0, -g.energy * t)), 0.0, 1e-8);
  }
}

TEST(Evolve, FreeCollapsedCondensateStaysUniform) {
  ModelParams p;
  p.N = 6;
  p.window = {-2, 4};
  const auto s = ManyBodyState::fock({{0, 0, 0, 6, 0, 0, 0}}, p.window);
  const auto collapsed = apply_field_annihilation(s, 0.5);
  const auto q = p.with_particles(5);
  for (double t : {0.0, 0.1, 1.3}) {
    const auto out = evolve(collapsed, q, t, krylov_cfg());
    for (double v : density_from_obdm(obdm(out), ring_grid(64))) EXPECT_NEAR(v / 6.0, 5.0, 1e-9);
  }
}

TEST(Evolve, KrylovMatchesEigenbasis) {
  const auto p = ModelParams::from_gN(-15.0, 10, {-2, 4});
  const auto g = ground_of_sector(p, 10, 1e-10);
  const auto collapsed = apply_field_annihilation(g.vector, 0.5);
  const auto q = p.with_particles(9);
  const double t = 3.0 * kRotationPeriod;
  const auto a = evolve(collapsed, q, t, krylov_cfg());
  const auto b = evolve(collapsed, q, t, eigen_cfg());
  EXPECT_GT(fidelity(a, b), 1.0 - 1e-8);
  for (const auto& [k, blk] : a.blocks()) {
    EXPECT_LT((blk.amp - b.block(k).amp).norm(), 1e-8 * std::sqrt(collapsed.norm2()));
  }
}

TEST(Evolve, LinearEnergyAndNormConservation) {
  const auto p = ModelParams::from_gN(-15.0, 6, {-2, 4});
  const auto u = random_block_state(p, {4, 6, 7}, 21);
  const auto v = random_block_state(p, {5, 6, 9}, 22);
  const Complex a(0.3, -1.1);
  const Complex b(-0.8, 0.4);
  const double t = 0.21;
  for (const auto& cfg : {krylov_cfg(), eigen_cfg()}) {
    const auto lhs = evolve(linear_combination(a, u, b, v), p, t, cfg);
    const auto rhs = linear_combination(a, evolve(u, p, t, cfg), b, evolve(v, p, t, cfg));
    const auto diff = linear_combination(1.0, lhs, -1.0, rhs);
    EXPECT_LT(diff.norm(), 1e-9);

    const auto ut = evolve(u, p, t, cfg);
    EXPECT_NEAR(energy_expectation(ut, p), energy_expectation(u, p), 1e-9);
    for (const auto& [k, blk] : u.blocks()) {
      EXPECT_NEAR(ut.block(k).norm2(), blk.norm2(), 1e-12);
    }
  }
}

TEST(Evolve, FallsBackToKrylovForLargeBlocks) {
  const auto p = ModelParams::from_gN(-15.0, 9, {-2, 4});
  const auto g = ground_of_sector(p, 9);
  std::vector<std::string> notes;
  set_log_sink([&](LogLevel, const std::string& m) { notes.push_back(m); });
  auto cfg = eigen_cfg();
  cfg.eigen_max_dim = 10;
  const auto out = evolve(g.vector, p, 0.05, cfg);
  set_log_sink(nullptr);
  EXPECT_NEAR(fidelity(out, g.vector), 1.0, 1e-10);
  ASSERT_FALSE(notes.empty());
  EXPECT_NE(notes.front().find("falling back to Krylov"), std::string::npos);
}

TEST(Evolve, RejectsNegativeTimeAndBadConfig) {
  const auto p = ModelParams::from_gN(-15.0, 3, {-2, 4});
  const auto g = ground_of_sector(p, 3);
  EXPECT_THROW(evolve(g.vector, p, -1.0), ContractViolation);
  PropagatorConfig bad;
  bad.krylov_dim = 1;
  EXPECT_THROW(evolve(g.vector, p, 1.0, bad), ConfigError);
}

TEST(Evolve, MatrixFreeKrylovMatchesAssembled) {
  const auto p = ModelParams::from_gN(-15.0, 7, {-2, 4});
  const auto g = ground_of_sector(p, 7);
  const auto c = apply_field_annihilation(g.vector, 0.5);
  const auto q = p.with_particles(6);
  auto mf = krylov_cfg();
  mf.sparse_budget = 0;
  const auto a = evolve(c, q, 0.2, mf);
  const auto b = evolve(c, q, 0.2, krylov_cfg());
  EXPECT_LT(linear_combination(1.0, a, -1.0, b).norm(), 1e-10);
}

TEST(EigenpairCache, RoundTripIsBitIdentical) {
  const auto dir = std::filesystem::temp_directory_path() / "ringtc_test_eig_cache";
  std::filesystem::remove_all(dir);
  const auto p = ModelParams::from_gN(-15.0, 8, {-2, 4});
  const auto fresh = cached_ground_of_sector(p, 8, 1e-10, dir);
  const auto path = eigenpair_path(dir, params_hash(p, 1e-10), 8);
  ASSERT_TRUE(std::filesystem::exists(path));
  const auto hit = cached_ground_of_sector(p, 8, 1e-10, dir);
  EXPECT_EQ(hit.energy, fresh.energy);
  EXPECT_EQ(hit.vector.block(8).amp, fresh.vector.block(8).amp);
  const auto direct = cached_ground_of_sector(p, 8, 1e-10, std::nullopt);
  EXPECT_EQ(direct.vector.block(8).amp, fresh.vector.block(8).amp);

  // A different coupling must not hit the same entry.
  const auto q = ModelParams::from_gN(-14.0, 8, {-2, 4});
  EXPECT_NE(params_hash(q, 1e-10), params_hash(p, 1e-10));
  auto bytes = read_file(path);
  ASSERT_TRUE(bytes.has_value());
  EXPECT_FALSE(deserialize_eigenpair(*bytes, params_hash(q, 1e-10), sector_basis(8, 8, p.window), p)
                   .has_value());
  EXPECT_FALSE(deserialize_eigenpair(bytes->substr(0, bytes->size() - 3), params_hash(p, 1e-10),
                                     sector_basis(8, 8, p.window), p)
                   .has_value());
  std::filesystem::remove_all(dir);
}
