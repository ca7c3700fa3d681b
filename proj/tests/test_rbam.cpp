#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "rbae/rbam.hpp"

using namespace rbae;
using testutil::max_rel_grad_error;
using testutil::random_tensor;

namespace {

constexpr double kEps = 1e-8;

// Independent brute-force evaluation of the repair equations over all N^2
// similarity pairs, scalars only: cosine, row softmax, weighted patch sum.
// Only valid for K=1, C=1 maps.
Tensor<double> rbfrm_bruteforce_k1(const Tensor<double>& f_def, const Tensor<double>& f_ref) {
  int n = f_def.size();
  std::vector<double> p(f_def.v.begin(), f_def.v.end());
  std::vector<double> b(f_ref.v.begin(), f_ref.v.end());
  Tensor<double> out(f_def.c, f_def.h, f_def.w);
  for (int i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (int j = 0; j < n; ++j)
      s[j] = p[i] * b[j] / (std::sqrt(p[i] * p[i] + kEps) * std::sqrt(b[j] * b[j] + kEps));
    double mx = *std::max_element(s.begin(), s.end());
    double denom = 0;
    for (int j = 0; j < n; ++j) denom += std::exp(s[j] - mx);
    double acc = 0;
    for (int j = 0; j < n; ++j) acc += b[j] * std::exp(s[j] - mx) / denom;
    out.v[i] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("patch grid round-trips exactly") {
  std::mt19937 rng(31);
  for (int k : {1, 2, 4}) {
    auto f = random_tensor<double>(3, 8, 8, rng);
    PatchGrid<double> grid(k, 3, 8, 8);
    CHECK(max_abs_diff(grid.compose(grid.decompose(f)), f) == 0.0);
  }
  CHECK_THROWS(PatchGrid<double>(3, 2, 8, 8));
}

TEST_CASE("single-patch repair returns the reference exactly") {
  std::mt19937 rng(32);
  auto f_def = random_tensor<double>(4, 4, 4, rng);
  auto f_ref = random_tensor<double>(4, 4, 4, rng);
  auto out = rbfrm_repair(constant(f_def), constant(f_ref), 4);
  CHECK(max_abs_diff(out->val, f_ref) == 0.0);  // softmax over one element is exactly 1
}

TEST_CASE("equidistant reference patches average exactly") {
  // query (1,0); references (1,1) and (1,-1) have equal cosine similarity.
  Tensor<double> f_def(2, 1, 2), f_ref(2, 1, 2);
  f_def.at(0, 0, 0) = 1.0;
  f_def.at(1, 0, 0) = 0.0;
  f_def.at(0, 0, 1) = 1.0;
  f_def.at(1, 0, 1) = 0.0;
  f_ref.at(0, 0, 0) = 1.0;
  f_ref.at(1, 0, 0) = 1.0;
  f_ref.at(0, 0, 1) = 1.0;
  f_ref.at(1, 0, 1) = -1.0;
  auto out = rbfrm_repair(constant(f_def), constant(f_ref), 1);
  for (int x = 0; x < 2; ++x) {
    CHECK(out->val.at(0, 0, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out->val.at(1, 0, x) == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("K=1 scalar toy matches the N^2 brute-force oracle") {
  Tensor<double> f_def(1, 2, 2), f_ref(1, 2, 2);
  f_def.v = {1, 0, 0, 1};
  f_ref.v = {2, 0, 0, 2};
  long zero_patches = 0;
  auto out = rbfrm_repair(constant(f_def), constant(f_ref), 1, kEps, &zero_patches);
  auto oracle = rbfrm_bruteforce_k1(f_def, f_ref);
  CHECK(max_abs_diff(out->val, oracle) < 1e-9);
  CHECK(zero_patches == 4);  // two zero patches in each map

  std::mt19937 rng(33);
  for (int rep = 0; rep < 20; ++rep) {
    auto d = random_tensor<double>(1, 4, 4, rng);
    auto r = random_tensor<double>(1, 4, 4, rng);
    auto got = rbfrm_repair(constant(d), constant(r), 1, kEps);
    CHECK(max_abs_diff(got->val, rbfrm_bruteforce_k1(d, r)) < 1e-9);
  }
}

TEST_CASE("similarity map is bounded and row-stochastic") {
  std::mt19937 rng(34);
  for (int rep = 0; rep < 50; ++rep) {
    auto d = random_tensor<double>(2, 4, 4, rng);
    auto r = random_tensor<double>(2, 4, 4, rng);
    auto sm = rbfrm_similarity(d, r, 2);
    for (int i = 0; i < sm.sim.rows(); ++i) {
      for (int j = 0; j < sm.sim.cols(); ++j) {
        CHECK(sm.sim(i, j) >= -1.0 - 1e-9);
        CHECK(sm.sim(i, j) <= 1.0 + 1e-9);
        CHECK(sm.sim_norm(i, j) > 0.0);
      }
      CHECK(sm.sim_norm.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("repaired patches stay in the convex hull of reference patches") {
  std::mt19937 rng(35);
  for (int rep = 0; rep < 1000; ++rep) {
    int k = (rep % 2) ? 1 : 2;
    auto d = random_tensor<double>(2, 4, 4, rng);
    auto r = random_tensor<double>(2, 4, 4, rng);
    auto out = rbfrm_repair(constant(d), constant(r), k);
    PatchGrid<double> grid(k, 2, 4, 4);
    auto b = grid.decompose(r);
    auto o = grid.decompose(out->val);
    for (int dcomp = 0; dcomp < b.cols(); ++dcomp) {
      double lo = b.col(dcomp).minCoeff(), hi = b.col(dcomp).maxCoeff();
      for (int i = 0; i < o.rows(); ++i) {
        CHECK(o(i, dcomp) >= lo - 1e-12);
        CHECK(o(i, dcomp) <= hi + 1e-12);
      }
    }
  }
}

TEST_CASE("patch sum is order independent") {
  std::mt19937 rng(36);
  auto d = random_tensor<double>(2, 4, 4, rng);
  auto r = random_tensor<double>(2, 4, 4, rng);
  auto sm = rbfrm_similarity(d, r, 2);
  PatchGrid<double> grid(2, 2, 4, 4);
  auto b = grid.decompose(r);
  int n = static_cast<int>(b.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  auto op_out = rbfrm_repair(constant(d), constant(r), 2);
  auto op_rows = grid.decompose(op_out->val);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd direct = Eigen::VectorXd::Zero(b.cols());
    Eigen::VectorXd permuted = Eigen::VectorXd::Zero(b.cols());
    for (int j = 0; j < n; ++j) {
      direct += sm.sim_norm(i, j) * b.row(j).transpose();
      permuted += sm.sim_norm(i, perm[j]) * b.row(perm[j]).transpose();
    }
    CHECK((direct - permuted).template lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((direct - op_rows.row(i).transpose()).template lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("cosine similarity columns are scale invariant") {
  std::mt19937 rng(37);
  auto d = random_tensor<double>(1, 2, 2, rng, 0.2, 1.0);
  auto r = random_tensor<double>(1, 2, 2, rng, 0.2, 1.0);
  auto before = rbfrm_similarity(d, r, 1);
  Tensor<double> r_scaled = r;
  r_scaled.v[2] *= 3.0;  // patch j=2 under K=1
  auto after = rbfrm_similarity(d, r_scaled, 1);
  for (int i = 0; i < before.sim.rows(); ++i)
    CHECK(std::abs(before.sim(i, 2) - after.sim(i, 2)) < 1e-6);
}

TEST_CASE("rbfrm gradient matches finite differences") {
  std::mt19937 rng(38);
  auto d = random_tensor<double>(2, 4, 4, rng);
  auto r = random_tensor<double>(2, 4, 4, rng);
  double err = max_rel_grad_error({d, r}, [](const std::vector<Var<double>>& in) {
    return mse(rbfrm_repair(in[0], in[1], 2), constant(Tensor<double>(2, 4, 4, 0.1)));
  });
  CHECK(err < 1e-3);
  CHECK(err < 1e-6);
}

TEST_CASE("ffm attention triple sums to one everywhere") {
  std::mt19937 rng(39);
  auto a4 = random_tensor<double>(3, 4, 4, rng, -5, 5);
  auto a2 = random_tensor<double>(3, 4, 4, rng, -5, 5);
  auto ao = random_tensor<double>(3, 4, 4, rng, -5, 5);
  auto maps = ffm_attention_maps(a4, a2, ao);
  for (int i = 0; i < a4.size(); ++i) {
    double s = maps[0].v[i] + maps[1].v[i] + maps[2].v[i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("ffm: uniform logits give the arithmetic mean") {
  std::mt19937 rng(40);
  auto f4 = random_tensor<double>(2, 3, 3, rng);
  auto f2 = random_tensor<double>(2, 3, 3, rng);
  auto fo = random_tensor<double>(2, 3, 3, rng);
  Tensor<double> logits(2, 3, 3, 0.37);
  auto out = ffm_attend(constant(logits), constant(logits), constant(logits), constant(f4),
                        constant(f2), constant(fo));
  for (int i = 0; i < out->val.size(); ++i) {
    double mean = (f4.v[i] + f2.v[i] + fo.v[i]) / 3.0;
    CHECK(out->val.v[i] == doctest::Approx(mean).epsilon(1e-14));
  }
}

TEST_CASE("ffm: logits (1,0,0) give softmax weights e/(e+2), 1/(e+2), 1/(e+2)") {
  auto w = softmax3_elem(1.0, 0.0, 0.0);
  double e = std::exp(1.0);
  CHECK(w[0] == doctest::Approx(e / (e + 2)).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1 / (e + 2)).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(1 / (e + 2)).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.5761).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(0.2119).epsilon(1e-4));
}

TEST_CASE("ffm_attend gradient matches finite differences") {
  std::mt19937 rng(41);
  std::vector<Tensor<double>> ins;
  for (int i = 0; i < 6; ++i) ins.push_back(random_tensor<double>(2, 3, 3, rng));
  double err = max_rel_grad_error(ins, [](const std::vector<Var<double>>& in) {
    return mse(ffm_attend(in[0], in[1], in[2], in[3], in[4], in[5]),
               constant(Tensor<double>(2, 3, 3, 0.2)));
  });
  CHECK(err < 1e-3);
  CHECK(err < 1e-6);
}

TEST_CASE("ffm module: data gradient through compression and attention convs") {
  std::mt19937 rng(42);
  Ffm<double> ffm(4, 5, 4, rng);
  std::vector<Tensor<double>> ins;
  for (int i = 0; i < 3; ++i) ins.push_back(random_tensor<double>(4, 4, 4, rng));
  double err = max_rel_grad_error(ins, [&](const std::vector<Var<double>>& in) {
    return mse(ffm(in[0], in[1], in[2]), constant(Tensor<double>(4, 4, 4, 0.0)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("repair_pyramid produces bundles for levels 3..5 only") {
  std::mt19937 rng(43);
  std::array<int, 5> widths = {4, 4, 4, 4, 4};
  Encoder<double> enc(64, widths, rng);
  Rbam<double> rbam(widths, {{{2, 4}, {2, 4}, {1, 2}}}, 5, 4, rng);

  auto img_a = random_tensor<double>(3, 64, 64, rng, 0.0, 1.0);
  auto img_b = random_tensor<double>(3, 64, 64, rng, 0.0, 1.0);
  auto pyr_def = enc(constant(img_a), "def");
  auto pyr_ref = enc(constant(img_b), "ref");
  auto bundles = rbam.repair_pyramid(pyr_def, pyr_ref);

  CHECK(bundles.size() == 3);
  for (int l = 3; l <= 5; ++l) {
    CHECK(bundles.count(l) == 1);
    CHECK(bundles.at(l).fused->val.same_shape(pyr_def.level(l)->val));
    CHECK(bundles.at(l).orig.get() == pyr_def.level(l).get());  // untouched original
  }

  // mismatched schedules rejected
  Encoder<double> enc_small(32, widths, rng);
  auto pyr_small = enc_small(constant(random_tensor<double>(3, 32, 32, rng)), "small");
  CHECK_THROWS(rbam.repair_pyramid(pyr_def, pyr_small));
}

TEST_CASE("feature repair loss: zero at equality, Eq-as-written hand case") {
  std::mt19937 rng(44);
  auto f = random_tensor<double>(2, 2, 2, rng);
  std::map<int, RepairBundle<double>> bundles;
  FeaturePyramid<double> clean;
  bundles[3].fused = constant(f);
  clean.levels[2] = constant(f);
  CHECK(scalar_value(feature_repair_loss(bundles, clean)) == 0.0);

  // single level, 1x1x2 features fused=(1,2), clean=(0,2): squared-norm term
  // is 1; dividing by (l2-l1)=2 gives 0.5.
  Tensor<double> fused(2, 1, 1), target(2, 1, 1);
  fused.v = {1, 2};
  target.v = {0, 2};
  std::map<int, RepairBundle<double>> one;
  FeaturePyramid<double> clean1;
  one[3].fused = constant(fused);
  clean1.levels[2] = constant(target);
  CHECK(scalar_value(feature_repair_loss(one, clean1)) == doctest::Approx(0.5).epsilon(1e-12));

  // strictly positive when any element differs
  Tensor<double> off = f;
  off.v[1] += 0.25;
  std::map<int, RepairBundle<double>> diff;
  FeaturePyramid<double> clean2;
  diff[4].fused = constant(off);
  clean2.levels[3] = constant(f);
  CHECK(scalar_value(feature_repair_loss(diff, clean2)) > 0.0);
}
