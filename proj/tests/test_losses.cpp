#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "rbae/losses.hpp"
#include "rbae/perceptual.hpp"

using namespace rbae;
using testutil::max_rel_grad_error;
using testutil::random_tensor;

namespace {

// Synthetic pyramid of 5 random levels below a 32x32 working resolution.
FeaturePyramid<double> random_pyramid(std::mt19937& rng, int channels = 2) {
  FeaturePyramid<double> pyr;
  int size = 16;
  for (int l = 0; l < 5; ++l) {
    pyr.levels[l] = constant(random_tensor<double>(channels, size, size, rng));
    size /= 2;
  }
  return pyr;
}

struct IdentityExtractor {
  std::array<Var<double>, 5> taps(const Var<double>& image) const {
    return {image, image, image, image, image};
  }
};

}  // namespace

TEST_CASE("pixel discrimination loss: zero residual, zero mask gives zero") {
  std::mt19937 rng(61);
  auto pyr = random_pyramid(rng);
  Tensor<double> mask(1, 32, 32, 0.0);
  long degenerate = 0;
  auto loss = pixel_discrimination_loss(pyr, pyr, mask, PixelDisNorm::kMinMax, &degenerate);
  CHECK(scalar_value(loss) == 0.0);
  CHECK(degenerate == 5);  // constant residual at every level
}

TEST_CASE("pixel discrimination loss: zero residual vs nonzero mask is positive") {
  std::mt19937 rng(62);
  auto pyr = random_pyramid(rng);
  Tensor<double> mask(1, 32, 32, 0.0);
  for (int y = 8; y < 16; ++y)
    for (int x = 8; x < 16; ++x) mask.at(0, y, x) = 1.0;
  auto loss = pixel_discrimination_loss(pyr, pyr, mask);
  CHECK(scalar_value(loss) > 0.0);
}

TEST_CASE("pixel discrimination level toy: residual [[0,4],[0,0]] vs mask [[0,1],[0,0]]") {
  // Bottom level features engineered so the channel-mean squared residual is
  // [[0,4],[0,0]]: single channel, difference [[0,2],[0,0]].
  Tensor<double> fo(1, 2, 2, 0.0), fa(1, 2, 2, 0.0), mask(1, 2, 2, 0.0);
  fo.at(0, 0, 1) = 2.0;
  mask.at(0, 0, 1) = 1.0;
  auto term = pixel_dis_level_term(constant(fo), constant(fa), mask);
  CHECK(scalar_value(term) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("pixel discrimination N output stays in [0,1]") {
  std::mt19937 rng(63);
  for (int rep = 0; rep < 20; ++rep) {
    auto r = random_tensor<double>(1, 4, 4, rng, -3.0, 7.0);
    auto n = minmax_norm(constant(r));
    CHECK(n->val.min() >= 0.0);
    CHECK(n->val.max() <= 1.0);
  }
}

TEST_CASE("pixel discrimination gradient matches finite differences") {
  std::mt19937 rng(64);
  Tensor<double> mask(1, 32, 32, 0.0);
  for (int y = 0; y < 13; ++y)
    for (int x = 4; x < 11; ++x) mask.at(0, y, x) = 1.0;

  std::vector<Tensor<double>> inputs;
  int size = 16;
  for (int l = 0; l < 5; ++l) {
    inputs.push_back(random_tensor<double>(2, size, size, rng));
    inputs.push_back(random_tensor<double>(2, size, size, rng));
    size /= 2;
  }
  double err = max_rel_grad_error(inputs, [&](const std::vector<Var<double>>& in) {
    FeaturePyramid<double> po, pa;
    for (int l = 0; l < 5; ++l) {
      po.levels[l] = in[2 * l];
      pa.levels[l] = in[2 * l + 1];
    }
    return pixel_discrimination_loss(po, pa, mask);
  });
  CHECK(err < 1e-3);
  CHECK(err < 1e-5);
}

TEST_CASE("zscore normalization gradient and degenerate rule") {
  std::mt19937 rng(65);
  auto x = random_tensor<double>(1, 4, 4, rng);
  double err = max_rel_grad_error({x}, [](const std::vector<Var<double>>& in) {
    return mse(zscore_norm(in[0]), constant(Tensor<double>(1, 4, 4, 0.1)));
  });
  CHECK(err < 1e-5);

  long degenerate = 0;
  auto z = zscore_norm(constant(Tensor<double>(1, 3, 3, 0.4)), &degenerate);
  CHECK(degenerate == 1);
  CHECK(z->val.max() == 0.0);
}

TEST_CASE("reconstruction loss examples") {
  CHECK(scalar_value(reconstruction_loss(constant(Tensor<double>(3, 4, 4, 0.37)),
                                         constant(Tensor<double>(3, 4, 4, 0.37)))) == 0.0);
  CHECK(scalar_value(reconstruction_loss(constant(Tensor<double>(3, 4, 4, 0.0)),
                                         constant(Tensor<double>(3, 4, 4, 1.0)))) ==
        doctest::Approx(1.0).epsilon(1e-12));
  Tensor<double> a(1, 1, 1), b(1, 1, 1);
  a.v[0] = 0.5;
  b.v[0] = 0.25;
  CHECK(scalar_value(reconstruction_loss(constant(a), constant(b))) ==
        doctest::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("perceptual loss: identity at equal inputs, symmetric, homogeneous") {
  std::mt19937 rng(66);
  PerceptualExtractor<double> ex(123, {4, 4, 6, 6, 8});
  auto img = random_tensor<double>(3, 16, 16, rng, 0.0, 1.0);
  auto other = random_tensor<double>(3, 16, 16, rng, 0.0, 1.0);

  CHECK(scalar_value(perceptual_loss(ex, constant(img), constant(img))) == 0.0);

  double ab = scalar_value(perceptual_loss(ex, constant(img), constant(other)));
  double ba = scalar_value(perceptual_loss(ex, constant(other), constant(img)));
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK(ab > 0.0);

  // doubling the tap difference doubles the loss under a linear extractor
  IdentityExtractor id;
  Tensor<double> delta = random_tensor<double>(3, 8, 8, rng, 0.01, 0.2);
  Tensor<double> base = random_tensor<double>(3, 8, 8, rng, 0.0, 1.0);
  Tensor<double> plus1 = base, plus2 = base;
  for (int i = 0; i < base.size(); ++i) {
    plus1.v[i] += delta.v[i];
    plus2.v[i] += 2 * delta.v[i];
  }
  double l1x = scalar_value(perceptual_loss<double>(id, constant(base), constant(plus1)));
  double l2x = scalar_value(perceptual_loss<double>(id, constant(base), constant(plus2)));
  CHECK(l2x == doctest::Approx(2.0 * l1x).epsilon(1e-10));
}

TEST_CASE("perceptual extractor is frozen") {
  PerceptualExtractor<double> ex(7, {2, 2, 2, 2, 2});
  for (auto& [name, p] : ex.params()) CHECK(p->requires_grad == false);

  auto img = variable(Tensor<double>(3, 8, 8, 0.5));
  auto loss = perceptual_loss(ex, constant(Tensor<double>(3, 8, 8, 0.2)), img);
  backward(loss);
  for (auto& [name, p] : ex.params()) CHECK(p->grad.size() == 0);  // no gradient buffers touched
  CHECK(img->grad.size() == img->val.size());
}

TEST_CASE("joint loss: weights, phase terms, errors") {
  LossWeights w;
  LossBreakdown t;
  t.phase = 1;
  t.rec = 0.01;
  t.per = 0.5;
  t.pixel_dis = 0.2;
  CHECK(joint_total(t, w) == doctest::Approx(1.7).epsilon(1e-12));

  LossBreakdown zero;
  zero.phase = 1;
  zero.rec = zero.per = zero.pixel_dis = 0.0;
  CHECK(joint_total(zero, w) == 0.0);

  LossBreakdown p2;
  p2.phase = 2;
  p2.rec = 0.1;
  p2.per = 0.1;
  p2.fea_rep = 0.1;
  CHECK_THROWS(joint_total(p2, w));  // seg missing
  p2.seg = 0.05;
  CHECK(joint_total(p2, w) == doctest::Approx(100 * 0.1 + 0.1 + 0.1 + 0.05).epsilon(1e-12));
}

TEST_CASE("soft mask targets: area resize preserves mass, nearest stays binary") {
  Tensor<double> mask(1, 8, 8, 0.0);
  mask.at(0, 3, 3) = 1.0;  // single defect pixel
  auto soft = downsample_area(mask, 4, 4);
  CHECK(soft.at(0, 1, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(soft.sum() * 4 == doctest::Approx(mask.sum()).epsilon(1e-12));

  auto hard = resize_nearest(mask, 4, 4);
  for (double v : hard.v) CHECK((v == 0.0 || v == 1.0));
}
