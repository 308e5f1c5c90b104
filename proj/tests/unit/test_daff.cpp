#include <gtest/gtest.h>

#include "dhvt/daff.hpp"
#include "dhvt/error.hpp"
#include "oracle.hpp"
#include "references.hpp"
#include "test_util.hpp"

namespace dhvt {
namespace {

using testing_util::max_abs_diff;
using testing_util::random_tensor;
using TD = Tensor<double>;

struct Fixture {
  ParamStore<double> store;
  Rng rng{3};
  DaffParams<double> p;

  explicit Fixture(DaffOptions options = {}, std::size_t dim = 8, std::size_t hidden = 12) {
    p = daff_init(ParamBuilder<double>(store, rng), dim, hidden, 4, options);
    // Non-trivial values everywhere, including BN running statistics.
    for (auto& e : store.entries()) {
      const bool var = e.name.find("running_var") != std::string::npos;
      for (auto& v : e.tensor.mutable_values()) v = var ? rng.uniform(0.5, 2.0) : rng.uniform(-0.4, 0.4);
    }
    for (ConvNorm<double>* n : {&p.norm1, &p.norm2, &p.norm3}) {
      auto& g = n->kind == NormKind::kBatch ? n->bn.gamma : n->ln.gamma;
      for (auto& v : g.mutable_values()) v = rng.uniform(0.5, 1.5);
    }
  }
};

TEST(PatchGrid, SideOfSquareSequences) {
  EXPECT_EQ(patch_grid_side(2), 1u);
  EXPECT_EQ(patch_grid_side(65), 8u);
  EXPECT_EQ(patch_grid_side(197), 14u);
  EXPECT_THROW(patch_grid_side(16), ShapeError);
  EXPECT_THROW(patch_grid_side(1), ContractError);
}

TEST(DaffInit, IndivisibleSeRatioIsConfigError) {
  ParamStore<double> store;
  Rng rng(0);
  EXPECT_THROW(daff_init(ParamBuilder<double>(store, rng), 10, 16, 4), ConfigError);
}

TEST(DaffInit, LayerShapes) {
  Fixture f;
  EXPECT_EQ(f.p.conv1.weight.shape(), (Shape{12, 8, 1, 1}));
  EXPECT_EQ(f.p.conv2.weight.shape(), (Shape{12, 1, 3, 3}));
  EXPECT_EQ(f.p.conv3.weight.shape(), (Shape{8, 12, 1, 1}));
  EXPECT_EQ(f.p.compress.weight.shape(), (Shape{2, 8}));
  EXPECT_EQ(f.p.excitation.weight.shape(), (Shape{8, 2}));
}

TEST(DaffForward, RejectsNonSquareAndWrongWidth) {
  Fixture f;
  Rng rng(1);
  EXPECT_THROW(daff_forward(f.p, {random_tensor<double>({1, 16, 8}, rng)}, Mode::kEval), ShapeError);
  EXPECT_THROW(daff_forward(f.p, {random_tensor<double>({1, 17, 6}, rng)}, Mode::kEval), ShapeError);
}

struct Variant {
  const char* name;
  DaffOptions options;
};

class DaffOracle : public ::testing::TestWithParam<Variant> {};

TEST_P(DaffOracle, MatchesReferenceInEvalAndTrain) {
  Fixture f(GetParam().options);
  Rng rng(4);
  const TD x = random_tensor<double>({2, 17, 8}, rng);
  for (bool train : {false, true}) {
    // Reference first: train mode updates running statistics.
    oracle::Vec se;
    const auto expected = reference::daff(f.p, x, train, &se);
    DaffTrace<double> trace;
    const TD y = daff_forward(f.p, {x}, train ? Mode::kTrain : Mode::kEval, &trace).tokens;
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_LE(max_abs_diff(y.values(), expected), 1e-10) << (train ? "train" : "eval");
    EXPECT_LE(max_abs_diff(trace.se_weight.values(), se), 1e-10);
  }
}

INSTANTIATE_TEST_SUITE_P(
    Options, DaffOracle,
    ::testing::Values(Variant{"default", {}},
                      Variant{"agg_all", {NormKind::kBatch, true, false}},
                      Variant{"no_shortcut", {NormKind::kBatch, false, true}},
                      Variant{"layer_norm", {NormKind::kLayer, false, false}}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(DaffForward, ClassTokenIsScaledBySeWeight) {
  Fixture f;
  Rng rng(5);
  const TD x = random_tensor<double>({2, 10, 8}, rng);
  DaffTrace<double> trace;
  const TD y = daff_forward(f.p, {x}, Mode::kEval, &trace).tokens;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 8; ++c)
      EXPECT_DOUBLE_EQ(y.at({b, 0, c}), x.at({b, 0, c}) * trace.se_weight.at({b, 0, c}));
}

TEST(DaffForward, PatchOutputsIgnoreClassToken) {
  Fixture f;
  Rng rng(6);
  TD x = random_tensor<double>({1, 10, 8}, rng);
  const TD before = daff_forward(f.p, {x}, Mode::kEval).tokens;
  TD x2 = x.detach();
  for (std::size_t c = 0; c < 8; ++c) x2.mutable_values()[c] += 3.0;
  const TD after = daff_forward(f.p, {x2}, Mode::kEval).tokens;
  for (std::size_t i = 8; i < before.numel(); ++i) EXPECT_EQ(before.values()[i], after.values()[i]);
}

TEST(DaffForward, PatchReceptiveFieldIsThreeByThree) {
  Fixture f;
  Rng rng(7);
  const std::size_t s = 5;
  const TD x = random_tensor<double>({1, 1 + s * s, 8}, rng);
  const TD before = daff_forward(f.p, {x}, Mode::kEval).tokens;
  TD x2 = x.detach();
  const std::size_t ci = 2, cj = 2;  // centre patch
  for (std::size_t c = 0; c < 8; ++c) x2.mutable_values()[(1 + ci * s + cj) * 8 + c] += 1.0;
  const TD after = daff_forward(f.p, {x2}, Mode::kEval).tokens;
  for (std::size_t t = 0; t < s * s; ++t) {
    const long di = std::labs(long(t / s) - long(ci)), dj = std::labs(long(t % s) - long(cj));
    bool changed = false;
    for (std::size_t c = 0; c < 8; ++c)
      changed |= before.at({0, t + 1, c}) != after.at({0, t + 1, c});
    EXPECT_EQ(changed, di <= 1 && dj <= 1) << "patch " << t;
  }
}

TEST(DaffForward, InputGradientMatchesFiniteDifferences) {
  Fixture f({}, 4, 6);
  Rng rng(8);
  TD x = random_tensor<double>({1, 5, 4}, rng);
  const TD probe = random_tensor<double>({1, 5, 4}, rng);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(ops::sum(ops::mul(daff_forward(f.p, {x}, Mode::kEval).tokens, probe)));
  }
  const auto numeric = oracle::numeric_grad(
      [&](const oracle::Vec& v) {
        const TD out = daff_forward(f.p, {TD(x.shape(), v)}, Mode::kEval).tokens;
        double s = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) s += out.values()[i] * probe.values()[i];
        return s;
      },
      oracle::vec(x));
  EXPECT_LE(max_abs_diff(x.grad(), numeric), 1e-7);
}

}  // namespace
}  // namespace dhvt
