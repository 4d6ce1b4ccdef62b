#include <gtest/gtest.h>

#include <map>

#include "ringtc/measurement.hpp"
#include "ringtc/observables.hpp"

using namespace ringtc;

namespace {

// Dense Fock space over all occupations of N bosons in a window, with mode
// operators built directly from occupation arithmetic. Used as an oracle that
// shares no code with the sector kernels.
struct DenseSpace {
  ModeWindow w;
  int n = 0;
  std::vector<std::vector<int>> states;
  std::map<std::vector<int>, Eigen::Index> index;

  DenseSpace(int particles, ModeWindow window) : w(window), n(particles) {
    std::vector<int> occ(w.size(), 0);
    fill(0, particles, occ);
    for (std::size_t i = 0; i < states.size(); ++i) index[states[i]] = static_cast<Eigen::Index>(i);
  }
  void fill(int mode, int left, std::vector<int>& occ) {
    if (mode == w.size() - 1) {
      occ[mode] = left;
      states.push_back(occ);
      return;
    }
    for (int c = 0; c <= left; ++c) {
      occ[mode] = c;
      fill(mode + 1, left - c, occ);
    }
  }
  Eigen::Index dim() const { return static_cast<Eigen::Index>(states.size()); }
};

// a_l : space(n) -> space(n - 1)
Eigen::MatrixXd annihilator(const DenseSpace& from, const DenseSpace& to, int mode_offset) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(to.dim(), from.dim());
  for (Eigen::Index c = 0; c < from.dim(); ++c) {
    auto occ = from.states[static_cast<std::size_t>(c)];
    const int k = occ[mode_offset];
    if (k == 0) continue;
    occ[mode_offset] -= 1;
    a(to.index.at(occ), c) = std::sqrt(double(k));
  }
  return a;
}

Eigen::MatrixXd dense_hamiltonian(const ModelParams& p, const std::vector<DenseSpace>& spaces, int n) {
  // spaces[j] holds j particles.
  const auto& s = spaces[static_cast<std::size_t>(n)];
  const int width = p.window.size();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(s.dim(), s.dim());
  std::vector<Eigen::MatrixXd> a1;
  std::vector<Eigen::MatrixXd> a2;
  for (int i = 0; i < width; ++i) {
    a1.push_back(annihilator(s, spaces[static_cast<std::size_t>(n - 1)], i));
    if (n >= 2) a2.push_back(annihilator(spaces[static_cast<std::size_t>(n - 1)], spaces[static_cast<std::size_t>(n - 2)], i));
  }
  for (int i = 0; i < width; ++i) {
    const double kin = 0.5 * std::pow(kTwoPi * p.window.mode(i) - p.alpha, 2);
    h += kin * a1[i].transpose() * a1[i];
  }
  if (n >= 2) {
    for (int k = 0; k < width; ++k)
      for (int l = 0; l < width; ++l)
        for (int m = 0; m < width; ++m)
          for (int q = 0; q < width; ++q) {
            if (k + l != m + q) continue;
            // a+_k a+_l a_m a_q
            h += 0.5 * p.g0 * (a2[l] * a1[k]).transpose() * (a2[m] * a1[q]);
          }
  }
  return h;
}

Eigen::MatrixXcd dense_field(const DenseSpace& from, const DenseSpace& to, double x) {
  Eigen::MatrixXcd f = Eigen::MatrixXcd::Zero(to.dim(), from.dim());
  for (int i = 0; i < from.w.size(); ++i) {
    f += std::polar(1.0, kTwoPi * from.w.mode(i) * x) * annihilator(from, to, i).cast<Complex>();
  }
  return f;
}

Eigen::MatrixXcd dense_propagator(const Eigen::MatrixXd& h, double t) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  Eigen::VectorXcd ph(h.rows());
  for (Eigen::Index i = 0; i < h.rows(); ++i) ph[i] = std::polar(1.0, -es.eigenvalues()[i] * t);
  const Eigen::MatrixXcd v = es.eigenvectors().cast<Complex>();
  return v * ph.asDiagonal() * v.adjoint();
}

Eigen::VectorXcd embed(const ManyBodyState& s, const DenseSpace& space) {
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(space.dim());
  for (const auto& [k, b] : s.blocks()) {
    for (std::size_t r = 0; r < b.basis->dim(); ++r) {
      v[space.index.at(b.basis->state(r).n)] = b.amp[static_cast<Eigen::Index>(r)];
    }
  }
  return v;
}

double circular_std(const std::vector<double>& xs) {
  std::vector<double> d(512, 0.0);
  // Point masses placed on a fine grid are enough for a 0.25 threshold.
  for (double x : xs) d[static_cast<std::size_t>(x * 512) % 512] += 1.0;
  return std::sqrt(circular_variance(d));
}

}  // namespace

TEST(CollapseOnce, PureCondensateKeepsItsMode) {
  const ModeWindow w{-2, 4};
  const auto s = ManyBodyState::fock({{0, 0, 7, 0, 0, 0, 0}}, w);
  for (double x : {0.0, 0.21, 0.5}) {
    const auto c = collapse_once(s, x);
    EXPECT_NEAR(c.norm2, 7.0, 1e-12);
    EXPECT_EQ(c.state.particles(), 6);
    EXPECT_NEAR(fidelity(c.state, ManyBodyState::fock({{0, 0, 6, 0, 0, 0, 0}}, w)), 1.0, 1e-14);
    EXPECT_NEAR(c.state.norm2(), 1.0, 1e-14);
  }
}

TEST(CollapseOnce, EigenstateSpreadsOverSevenSectors) {
  const int n = 8;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const auto c = collapse_once(g.vector, 0.5);
  std::vector<int> ks;
  for (const auto& [k, b] : c.state.blocks()) {
    if (b.norm2() > 1e-20) ks.push_back(k);
  }
  EXPECT_EQ(ks, (std::vector<int>{n - 4, n - 3, n - 2, n - 1, n, n + 1, n + 2}));
}

TEST(CollapseOnce, ConditionalDensityPeaksAtDetection) {
  const int n = 12;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto c = collapse_once(ground_of_sector(p, n).vector, 0.5);
  const auto rho = density_on_grid(c.state, 512);
  EXPECT_NEAR(peak_argmax(rho), 0.5, 1.0 / 512);
  EXPECT_GT(contrast(rho), 0.5);
}

TEST(CollapseOnce, NodeIsAnError) {
  const ModeWindow w{0, 1};
  ManyBodyState s(1, w);
  s.add_block(0).amp[0] = 1.0;
  s.add_block(1).amp[0] = 1.0;
  s.normalize();
  // psi(x) gives (1 + exp(i 2 pi x)) / sqrt 2, which vanishes at x = 1/2.
  EXPECT_THROW(collapse_once(s, 0.5), MeasurementAtNode);
  EXPECT_NEAR(collapse_once(s, 0.0).norm2, 2.0, 1e-14);
}

TEST(SamplePosition, UniformPassesKolmogorovSmirnov) {
  std::vector<double> d(512, 1.0);
  Rng rng(11);
  const int n = 10000;
  std::vector<double> xs;
  for (int i = 0; i < n; ++i) xs.push_back(sample_position(d, rng));
  std::sort(xs.begin(), xs.end());
  double dmax = 0.0;
  for (int i = 0; i < n; ++i) {
    dmax = std::max({dmax, std::abs(xs[i] - double(i) / n), std::abs(xs[i] - double(i + 1) / n)});
  }
  // Asymptotic KS critical value at p = 0.01.
  EXPECT_LT(dmax, 1.628 / std::sqrt(double(n)));
}

TEST(SamplePosition, SingleBinStaysOnItsNode) {
  std::vector<double> d(256, 0.0);
  d[77] = 3.0;
  Rng rng(5);
  double mean = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double x = sample_position(d, rng);
    EXPECT_LT(std::abs(x - 77.0 / 256), 1.0 / 256 + 1e-15);
    mean += x / 2000;
  }
  EXPECT_NEAR(mean, 77.0 / 256, 0.1 / 256);
}

TEST(SamplePosition, CosineMomentMatchesIntegral) {
  const auto grid = ring_grid(512);
  std::vector<double> d;
  for (double x : grid) d.push_back(1.0 + std::cos(kTwoPi * x));
  Rng rng(99);
  const int n = 20000;
  double m = 0.0;
  for (int i = 0; i < n; ++i) m += std::cos(kTwoPi * sample_position(d, rng));
  m /= n;
  // E[cos] = 1/2, Var[cos] = 1/2 - 1/4.
  EXPECT_NEAR(m, 0.5, 3.0 * 0.5 / std::sqrt(double(n)));
}

TEST(SamplePosition, RejectsZeroAndNegativeDensity) {
  Rng rng(1);
  std::vector<double> zero(64, 0.0);
  EXPECT_THROW(sample_position(zero, rng), ContractViolation);
  std::vector<double> neg(64, 1.0);
  neg[3] = -0.5;
  EXPECT_THROW(sample_position(neg, rng), ContractViolation);
}

TEST(SamplePosition, DeterministicForSeed) {
  std::vector<double> d;
  for (double x : ring_grid(128)) d.push_back(2.0 + std::sin(kTwoPi * 3 * x));
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_position(d, a), sample_position(d, b));
}

TEST(StreamSeed, DistinctAndStable) {
  EXPECT_NE(stream_seed(1, 0), stream_seed(1, 1));
  EXPECT_NE(stream_seed(1, 0), stream_seed(2, 0));
  EXPECT_EQ(stream_seed(1, 3), stream_seed(1, 3));
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
}

TEST(SequentialMeasure, PurifiesTheCondensate) {
  const int n = 20;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const double before = condensate_fraction(obdm(g.vector));
  double after = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    const auto r = sequential_measure(g.vector, 0.2, stream_seed(2024, s));
    EXPECT_EQ(r.record.positions.size(), 4u);
    EXPECT_EQ(r.state.particles(), 16);
    for (double nrm : r.record.norms) EXPECT_GT(nrm, 0.0);
    after += condensate_fraction(obdm(r.state)) / seeds;
  }
  EXPECT_GT(after, before);
}

TEST(SequentialMeasure, SingleDetectionEqualsCollapse) {
  const int n = 6;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const auto r = sequential_measure(g.vector, 1.0 / n, 77);
  ASSERT_EQ(r.record.positions.size(), 1u);
  const auto c = collapse_once(g.vector, r.record.positions[0]);
  EXPECT_NEAR(r.record.norms[0], c.norm2, 1e-12);
  EXPECT_LT(linear_combination(1.0, r.state, -1.0, c.state).norm(), 1e-13);
}

TEST(SequentialMeasure, InjectedPositionsAreUsed) {
  const int n = 10;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  SequentialOptions opt;
  opt.positions = std::vector<double>{0.5, 0.52};
  const auto r = sequential_measure(g.vector, 0.2, 0, opt);
  EXPECT_EQ(r.record.positions, *opt.positions);
  auto c = collapse_once(g.vector, 0.5);
  c = collapse_once(c.state, 0.52);
  EXPECT_LT(linear_combination(1.0, r.state, -1.0, c.state).norm(), 1e-13);
  opt.positions = std::vector<double>{0.5};
  EXPECT_THROW(sequential_measure(g.vector, 0.2, 0, opt), ContractViolation);
}

TEST(SequentialMeasure, ParticleNumberBookkeeping) {
  const int n = 12;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  SequentialOptions opt;
  int calls = 0;
  opt.on_collapse = [&](int k, const ManyBodyState& s) {
    ++calls;
    EXPECT_NEAR(obdm(s).trace(), n - k, 1e-9);
  };
  sequential_measure(g.vector, 0.25, 3, opt);
  EXPECT_EQ(calls, 3);
}

TEST(SequentialMeasure, SeedDeterminismIsBitwise) {
  const int n = 10;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const auto a = sequential_measure(g.vector, 0.3, 123);
  const auto b = sequential_measure(g.vector, 0.3, 123);
  EXPECT_EQ(a.record.positions, b.record.positions);
  EXPECT_EQ(a.record.norms, b.record.norms);
  for (const auto& [k, blk] : a.state.blocks()) EXPECT_EQ(blk.amp, b.state.block(k).amp);
  const auto c = sequential_measure(g.vector, 0.3, 124);
  EXPECT_NE(a.record.positions, c.record.positions);
}

TEST(SequentialMeasure, FirstPositionIsUniformForEigenstates) {
  const int n = 5;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const int bins = 10;
  const int draws = 3000;
  std::vector<int> counts(bins, 0);
  for (int s = 0; s < draws; ++s) {
    const auto r = sequential_measure(g.vector, 1.0 / n, stream_seed(9, s));
    ++counts[static_cast<std::size_t>(r.record.positions[0] * bins) % bins];
  }
  double chi2 = 0.0;
  const double expect = double(draws) / bins;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // 9 degrees of freedom, p = 0.001.
  EXPECT_LT(chi2, 27.88);
}

TEST(SequentialMeasure, PositionsClusterForLargeSystems) {
  const int n = 40;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  for (int s = 0; s < 2; ++s) {
    const auto r = sequential_measure(g.vector, 0.2, stream_seed(31, s));
    ASSERT_EQ(r.record.positions.size(), 8u);
    EXPECT_LT(circular_std(r.record.positions), 0.25);
  }
}

TEST(SequentialMeasure, RejectsBadEpsilon) {
  const auto s = ManyBodyState::fock({{0, 4, 0}}, {-1, 1});
  EXPECT_THROW(sequential_measure(s, 0.0, 1), ContractViolation);
  EXPECT_THROW(sequential_measure(s, 1.0, 1), ContractViolation);
  EXPECT_THROW(sequential_measure(s, 0.1, 1), ContractViolation);
}

TEST(CorrelationEvolution, FreeCondensateIsUniform) {
  ModelParams p;
  p.N = 8;
  p.window = {-2, 4};
  const auto s = ManyBodyState::fock({{0, 0, 0, 8, 0, 0, 0}}, p.window);
  const auto times = uniform_times(2 * kRotationPeriod, kRotationPeriod / 10);
  const auto c = correlation_evolution(s, p, 0.5, times);
  for (const auto& slice : c.rho2) {
    for (double v : slice) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(CorrelationEvolution, SlicesAreNormalizedAndPeakMoves) {
  const int n = 10;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  const auto times = uniform_times(kRotationPeriod, kRotationPeriod / 40);
  const auto c = correlation_evolution(g.vector, p, 0.5, times);
  ASSERT_EQ(c.rho2.size(), times.size());
  for (const auto& slice : c.rho2) {
    double s = 0.0;
    for (double v : slice) {
      s += v;
      EXPECT_GE(v, -1e-10);
    }
    EXPECT_NEAR(s / slice.size(), 1.0, 1e-8);
  }
  EXPECT_NEAR(circular_mean(c.rho2.front()), 0.5, 1e-9);
  const auto track = peak_track(c);
  ASSERT_TRUE(track.velocity.has_value());
  EXPECT_NEAR(*track.velocity / kTwoPi, 1.0, 0.02);
}

TEST(CorrelationEvolution, StopPredicateEndsEarly) {
  const int n = 6;
  const auto p = ModelParams::from_gN(-15.0, n, {-2, 4});
  const auto g = ground_of_sector(p, n);
  CorrelationOptions opt;
  opt.stop = [](double t, const std::vector<double>&) { return t >= 0.05; };
  const auto c = correlation_evolution(g.vector, p, 0.5, uniform_times(1.0, 0.01), opt);
  EXPECT_EQ(c.times.size(), 6u);
}

TEST(CorrelationEvolution, ReductionIdentityAgainstHeisenbergPicture) {
  const ModeWindow w{-1, 2};
  for (int n : {3, 4}) {
    const auto p = ModelParams::from_gN(-15.0, n, w);
    std::vector<DenseSpace> spaces;
    for (int j = 0; j <= n; ++j) spaces.emplace_back(j, w);
    const Eigen::MatrixXd hn = dense_hamiltonian(p, spaces, n);
    const Eigen::MatrixXd hn1 = dense_hamiltonian(p.with_particles(n - 1), spaces, n - 1);

    const auto g = ground_of_sector(p, n, 1e-12);
    const Eigen::VectorXcd psi0 = embed(g.vector, spaces[n]);
    const double x1 = 0.5;
    const double s = 0.37;  // arbitrary measurement time
    const std::vector<double> times{0.0, 0.013, 0.05, 0.11};
    const auto series = correlation_evolution(g.vector, p, x1, times, {64});

    const Eigen::MatrixXcd un_s = dense_propagator(hn, s);
    const Eigen::MatrixXcd f1 = dense_field(spaces[n], spaces[n - 1], x1);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      // || psi(x, s + t) psi(x1, s) |psi0> || with Heisenberg operators
      // reduces to || psi(x) U(t) psi(x1) U(s) psi0 ||.
      const Eigen::VectorXcd mid = dense_propagator(hn1, times[ti]) * (f1 * (un_s * psi0));
      std::vector<double> slice;
      for (double x : series.grid) {
        slice.push_back((dense_field(spaces[n - 1], spaces[n - 2], x) * mid).squaredNorm());
      }
      normalize_slice(slice);
      for (std::size_t i = 0; i < slice.size(); ++i) {
        EXPECT_NEAR(series.rho2[ti][i], slice[i], 1e-9) << "N=" << n << " t=" << times[ti];
      }
    }
  }
}

TEST(UniformTimes, InclusiveEndpoint) {
  const auto t = uniform_times(kRotationPeriod, kRotationPeriod / 40);
  ASSERT_EQ(t.size(), 41u);
  EXPECT_NEAR(t.back(), kRotationPeriod, 1e-15);
  EXPECT_THROW(uniform_times(1.0, 0.0), ConfigError);
}
