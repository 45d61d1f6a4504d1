#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "vpc/builders.hpp"
#include "vpc/train.hpp"

using namespace vpc;

namespace {

Circuit two_cell_vt() {
  Circuit c;
  c.num_vars = 2;
  NodeId e0, e1;
  {
    NodeId a = c.add(GaussianLeaf{0, -2.0, 0.0});
    NodeId b = c.add(GaussianLeaf{1, 0.0, 0.0});
    e0 = c.add(ProductNode{{a, b}});
  }
  {
    NodeId a = c.add(GaussianLeaf{0, 2.0, 0.0});
    NodeId b = c.add(GaussianLeaf{1, 0.0, 0.0});
    e1 = c.add(ProductNode{{a, b}});
  }
  VTSumNode vt;
  vt.scope = {0, 1};
  vt.centroids = {{-2.0, 0.0}, {2.0, 0.0}};
  vt.log_mixture = {std::log(0.5), std::log(0.5)};
  vt.experts = {e0, e1};
  c.root = c.add(std::move(vt));
  c.finalize();
  return c;
}

Circuit small_hfv(SplitMix64& rng) {
  std::vector<std::vector<double>> vc = {{-1.0, 1.0}, {-0.5, 1.5}};
  auto init = [&rng](VariableId v, int cell) {
    (void)cell;
    return GaussianLeaf{v, rng.uniform(-1.0, 1.0), std::log(rng.uniform(0.7, 1.3))};
  };
  return build_hfv(left_linear_vtree(2), vc, init);
}

Points cluster_data(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Points pts;
  for (std::size_t i = 0; i < n; ++i) {
    double cx = (rng.uniform_index(2) == 0) ? -2.0 : 2.0;
    pts.push_back({cx + rng.normal(0.0, 0.6), rng.normal(0.0, 0.6)});
  }
  return pts;
}

double fd_check(Circuit& c, const Points& batch, double alpha, double h = 1e-5) {
  ParamTable pt(c);
  BatchGrad bg = backward(c, pt, batch, alpha);
  std::vector<double> params = pt.gather();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> p = params;
    p[i] += h;
    pt.scatter_raw(p);
    double fp = soft_nll(c, batch, alpha);
    p[i] = params[i] - h;
    pt.scatter_raw(p);
    double fm = soft_nll(c, batch, alpha);
    double gfd = (fp - fm) / (2.0 * h);
    double rel = std::abs(bg.grad[i] - gfd) /
                 std::max({1.0, std::abs(bg.grad[i]), std::abs(gfd)});
    worst = std::max(worst, rel);
  }
  pt.scatter_raw(params);
  return worst;
}

}  // namespace

TEST_CASE("soft gate weight closed form") {
  // centroids 0 and 2 at u = 0, alpha = 1: w0 = 1 / (1 + e^-4)
  auto lw = soft_log_weights_1d({0.0, 2.0}, 0.0, 1.0);
  CHECK(std::exp(lw[0]) == doctest::Approx(0.9820137900379085).epsilon(1e-14));
  CHECK(std::exp(lw[0]) + std::exp(lw[1]) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("soft-to-hard gate bound holds and tightens") {
  SplitMix64 rng(7);
  int checked = 0;
  while (checked < 2000) {
    std::size_t k = 2 + rng.uniform_index(4);
    std::vector<std::vector<double>> cents;
    for (std::size_t i = 0; i < k; ++i)
      cents.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
    std::vector<double> u = {rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
    double alpha = rng.uniform(0.5, 30.0);
    Tessellation tess(cents);
    Margin m = nearest_centroid(tess, u);
    if (!(m.gamma > 0.0)) continue;
    auto w = soft_weights(cents, u, alpha);
    double bound = static_cast<double>(k - 1) * std::exp(-alpha * m.gamma);
    CHECK(1.0 - w[static_cast<std::size_t>(m.nearest_cell)] <= bound + 1e-15);
    ++checked;
  }
}

TEST_CASE("soft gates match hard gates at extreme temperature") {
  SplitMix64 rng(8);
  for (int t = 0; t < 300; ++t) {
    std::vector<std::vector<double>> cents = {{rng.uniform(-3.0, 0.0), 0.0},
                                              {rng.uniform(0.5, 3.0), 1.0}};
    std::vector<double> u = {rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
    Tessellation tess(cents);
    Margin m = nearest_centroid(tess, u);
    if (m.gamma < 0.01) continue;
    auto w = soft_weights(cents, u, 1e4);
    CHECK(w[static_cast<std::size_t>(m.nearest_cell)] == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("soft normalizer converges to the hard normalizer") {
  Circuit c = two_cell_vt();
  auto quad = [&](EvalMode m) {
    double z = 0.0;
    const int n = 1500;
    const double lo = -9.0, hi = 9.0, h = (hi - lo) / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        std::vector<double> x = {lo + (i + 0.5) * h, lo + (j + 0.5) * h};
        z += std::exp(eval_log_density(c, x, m)) * h * h;
      }
    return z;
  };
  double zh = quad(EvalMode::Hard());
  double prev = kInf;
  for (double alpha : {1.0, 4.0, 16.0, 64.0, 256.0}) {
    double diff = std::abs(quad(EvalMode::Soft(alpha)) - zh);
    CHECK(diff <= prev + 1e-4);
    prev = diff;
  }
  CHECK(prev <= 1e-4);
}

TEST_CASE("parameter table gathers, scatters, and projects") {
  Circuit c = two_cell_vt();
  ParamTable pt(c);
  auto p = pt.gather();
  // 4 leaves * 2 + 2 mixture logits + 2x2 centroids
  CHECK(p.size() == 14);
  for (double& v : p) v += 0.25;
  pt.scatter_raw(p);
  CHECK(pt.gather() == p);

  auto& vt = std::get<VTSumNode>(c.nodes[c.root]);
  pt.project();
  double s = 0.0;
  for (double w : vt.log_mixture) s += std::exp(w);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-13));

  auto& leaf = std::get<GaussianLeaf>(c.nodes[0]);
  leaf.log_stddev = -20.0;
  pt.project();
  CHECK(leaf.log_stddev == doctest::Approx(kLogStddevFloor));
}

TEST_CASE("analytic gradients match central finite differences") {
  SplitMix64 rng(9);
  SUBCASE("plain mixture") {
    Circuit c;
    c.num_vars = 1;
    NodeId a = c.add(GaussianLeaf{0, -1.0, 0.2});
    NodeId b = c.add(GaussianLeaf{0, 1.5, -0.3});
    SumNode s;
    s.children = {a, b};
    s.log_weights = {0.4, -0.2};  // deliberately unnormalized
    c.root = c.add(std::move(s));
    c.finalize();
    Points batch = {{0.3}, {-1.2}, {2.0}};
    CHECK(fd_check(c, batch, 2.0) <= 1e-7);
  }
  SUBCASE("voronoi-gated circuit") {
    Circuit c = two_cell_vt();
    Points batch = {{0.3, -0.5}, {-1.8, 0.2}, {2.2, 1.0}, {0.01, 0.0}};
    CHECK(fd_check(c, batch, 3.0) <= 1e-7);
  }
  SUBCASE("hfv circuit with shared univariate centroids") {
    Circuit c = small_hfv(rng);
    Points batch = {{0.4, 0.6}, {-1.5, 1.2}, {0.9, -0.4}};
    CHECK(fd_check(c, batch, 2.5) <= 1e-7);
  }
  SUBCASE("random parameter perturbations") {
    for (int t = 0; t < 20; ++t) {
      Circuit c = t % 2 == 0 ? two_cell_vt() : small_hfv(rng);
      ParamTable pt(c);
      auto p = pt.gather();
      for (double& v : p) v += rng.normal(0.0, 0.2);
      pt.scatter_raw(p);
      Points batch;
      for (int i = 0; i < 3; ++i) batch.push_back({rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)});
      CHECK(fd_check(c, batch, rng.uniform(0.5, 5.0)) <= 1e-5);
    }
  }
}

TEST_CASE("annealing schedule endpoints and midpoint") {
  SoftGateConfig g;  // 1 -> 50
  CHECK(anneal_alpha(0, 101, g) == doctest::Approx(1.0));
  CHECK(anneal_alpha(100, 101, g) == doctest::Approx(50.0));
  CHECK(anneal_alpha(50, 101, g) == doctest::Approx(25.5));
  CHECK(anneal_alpha(0, 1, g) == doctest::Approx(1.0));
  CHECK_THROWS_AS(anneal_alpha(5, 5, g), ArgumentError);
}

TEST_CASE("k-means recovers separated clusters deterministically") {
  Points data = cluster_data(400, 31);
  auto c1 = kmeans_init(data, 2, 100, 5);
  auto c2 = kmeans_init(data, 2, 100, 5);
  CHECK(c1 == c2);
  std::sort(c1.begin(), c1.end());
  CHECK(c1[0][0] == doctest::Approx(-2.0).epsilon(0.15));
  CHECK(c1[1][0] == doctest::Approx(2.0).epsilon(0.15));

  CHECK_THROWS_AS(kmeans_init(Points{{0.0}}, 2), ArgumentError);
  Points same(10, std::vector<double>{1.0, 1.0});
  CHECK_THROWS_AS(kmeans_init(same, 2), ArgumentError);

  auto u = kmeans_init_1d({0.0, 0.1, 5.0, 5.1}, 2, 50, 1);
  CHECK(u.size() == 2);
  CHECK(u[0] < u[1]);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Circuit c = two_cell_vt();
  ParamTable pt0(c);
  pt0.project();
  auto before = pt0.gather();
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 50;
  cfg.snapshot_stride = 0;
  Points data = cluster_data(100, 77);
  Points val = cluster_data(40, 78);
  TrainResult res = train(c, data, val, cfg);
  ParamTable pt(res.circuit);
  CHECK(pt.gather() == before);
  REQUIRE(res.trace.size() == 1);
  CHECK(std::isfinite(res.trace[0].train_nll));
  CHECK(res.trace[0].alpha == doctest::Approx(1.0));
}

TEST_CASE("training improves validation likelihood on clustered data") {
  Points data = cluster_data(600, 91);
  Points val = cluster_data(200, 92);
  Circuit c = build_vt_model(data, 2, 2, VtreeKind::LeftLinear, 3);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 200;
  cfg.snapshot_stride = 4;
  cfg.seed = 11;
  TrainResult res = train(c, data, val, cfg);
  REQUIRE(res.trace.size() == 8);
  CHECK(!res.aborted);
  CHECK(res.best_epoch >= 0);
  CHECK(res.trace.back().val_ll_soft >= res.trace.front().val_ll_soft - 0.05);
  // certified columns appear exactly at snapshot epochs
  CHECK(res.trace[0].val_ll_hard_lo.has_value());
  CHECK(!res.trace[1].val_ll_hard_lo.has_value());
  CHECK(res.trace[4].val_ll_hard_lo.has_value());
  CHECK(res.trace[7].val_ll_hard_lo.has_value());
  auto& row = res.trace[4];
  CHECK(*row.val_ll_hard_lo <= *row.val_ll_hard_hi);
}

TEST_CASE("training runs are bit-reproducible") {
  Points data = cluster_data(300, 13);
  Points val = cluster_data(100, 14);
  auto run = [&] {
    Circuit c = build_vt_model(data, 2, 2, VtreeKind::LeftLinear, 3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 100;
    cfg.snapshot_stride = 2;
    cfg.seed = 99;
    TrainResult res = train(c, data, val, cfg);
    std::ostringstream os;
    write_train_trace(os, res.trace);
    return os.str();
  };
  CHECK(run() == run());
}

TEST_CASE("train trace CSV schema") {
  std::vector<TrainTraceRow> rows(2);
  rows[0] = {0, 1.0, 2.5, -2.0, -2.2, -1.9};
  rows[1].epoch = 1;
  rows[1].alpha = 1.5;
  rows[1].train_nll = 2.4;
  rows[1].val_ll_soft = -1.9;
  std::ostringstream os;
  write_train_trace(os, rows);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "epoch,alpha,train_nll,val_ll_soft,val_ll_hard_lo,val_ll_hard_hi");
  std::getline(is, line);
  CHECK(line.substr(0, 2) == "0,");
  std::getline(is, line);
  CHECK(line.substr(line.size() - 2) == ",,");  // hard columns empty off-snapshot
}

TEST_CASE("canonicalize sorts shared centroids and preserves the density") {
  SplitMix64 rng(55);
  Circuit c = small_hfv(rng);
  Circuit shuffled = c;
  // swap the two cells of variable 0 by hand: centroid list, leaf-block
  // experts, and the corresponding joint tensor rows
  std::swap(shuffled.var_centroids[0][0], shuffled.var_centroids[0][1]);
  auto& h = std::get<HFVSumNode>(shuffled.nodes[shuffled.root]);
  int bi = h.blocks[0].vars == std::vector<VariableId>{0} ? 0 : 1;
  auto& blk = h.blocks[static_cast<std::size_t>(bi)];
  std::swap(blk.experts[0], blk.experts[1]);
  if (bi == 0) {
    std::swap(h.log_joint[0], h.log_joint[2]);
    std::swap(h.log_joint[1], h.log_joint[3]);
  } else {
    std::swap(h.log_joint[0], h.log_joint[1]);
    std::swap(h.log_joint[2], h.log_joint[3]);
  }
  canonicalize_hfv(shuffled);
  CHECK(shuffled.var_centroids[0][0] < shuffled.var_centroids[0][1]);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x = {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    CHECK(eval_log_density(shuffled, x, EvalMode::Hard()) ==
          doctest::Approx(eval_log_density(c, x, EvalMode::Hard())).epsilon(1e-13));
  }
  CHECK(hfv_log_partition(shuffled) == doctest::Approx(hfv_log_partition(c)).epsilon(1e-13));
}

TEST_CASE("baseline builder produces valid normalized circuits") {
  for (std::uint32_t d : {2u, 3u}) {
    Circuit c = build_baseline(d, default_units(d), VtreeKind::RandomBinary, 4);
    auto rep = validate_structure(c);
    CHECK(rep.smooth);
    CHECK(rep.decomposable);
    std::vector<double> x(d, 0.3);
    CHECK(std::isfinite(eval_log_density(c, x, EvalMode::Hard())));
  }
}
