#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "dhvt/error.hpp"
#include "dhvt/gradcheck.hpp"
#include "dhvt/model.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

namespace dhvt {
namespace {

using testing_util::as_vec;
using testing_util::max_abs_diff;
using testing_util::random_tensor;
using TD = Tensor<double>;

std::string config_error_message(const ModelConfig& cfg) {
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

// ---- variants and validation ----

TEST(Variants, ReferenceRows) {
  const auto t = variant_config("DHVT-T", "CIFAR", 4);
  EXPECT_EQ(t.embed_dim, 192u);
  EXPECT_EQ(t.depth, 12u);
  EXPECT_EQ(t.num_heads, 4u);
  EXPECT_EQ(t.num_classes, 100u);
  const auto s = variant_config("DHVT-S", "ImageNet", 16);
  EXPECT_EQ(s.embed_dim, 384u);
  EXPECT_EQ(s.depth, 12u);
  EXPECT_EQ(s.num_heads, 6u);
  EXPECT_EQ(s.num_classes, 1000u);
  EXPECT_EQ(s.image_height, 224u);
  const auto s2 = variant_config("DHVT-S", "CIFAR", 2);
  EXPECT_EQ(s2.embed_dim, 384u);
  EXPECT_EQ(s2.num_heads, 8u);
  EXPECT_EQ(variant_config("DHVT-T", "ImageNet", 16).num_heads, 3u);
  EXPECT_EQ(variant_config("DHVT-S", "Domain", 16).num_heads, 6u);
  EXPECT_EQ(variant_config("DHVT-T", "Domain", 16).num_classes, 345u);
}

TEST(Variants, DefaultsAreFullModel) {
  for (const auto& row : reference_variants()) {
    const auto cfg = variant_config(row.model, row.dataset, row.patch);
    EXPECT_TRUE(cfg.use_sope && cfg.use_daff && cfg.use_head_token);
    EXPECT_FALSE(cfg.use_abs_pos_embed);
    EXPECT_NO_THROW(validate(cfg));
  }
}

TEST(Variants, UnknownCombinationListsOptions) {
  try {
    variant_config("DHVT-T", "CIFAR", 16);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(DHVT-S, ImageNet, 16)"), std::string::npos) << msg;
  }
}

TEST(Validate, NamesViolatedConstraint) {
  ModelConfig cfg = micro_config();
  cfg.num_heads = 3;
  EXPECT_NE(config_error_message(cfg).find("num_heads"), std::string::npos);
  cfg = micro_config();
  cfg.image_width = 10;
  EXPECT_NE(config_error_message(cfg).find("patch_size"), std::string::npos);
  cfg = micro_config();
  cfg.mlp_ratio = 1.03;
  EXPECT_NE(config_error_message(cfg).find("mlp_ratio"), std::string::npos);
  cfg = micro_config();
  cfg.se_ratio = 5;
  EXPECT_NE(config_error_message(cfg).find("se_ratio"), std::string::npos);
  cfg = micro_config();
  cfg.patch_size = 8;
  cfg.image_height = cfg.image_width = 16;
  EXPECT_NE(config_error_message(cfg).find("patch sizes"), std::string::npos);
  cfg.use_sope = false;
  EXPECT_EQ(config_error_message(cfg), "");
  EXPECT_THROW(Model<float>::build(baseline_of(micro_config()), 0).forward(
                   Tensor<float>({1, 3, 4, 4}), Mode::kEval),
               ShapeError);
}

TEST(NormPolicy, ParsesAllFourCombinations) {
  for (const char* text : {"BN-BN", "BN-LN", "LN-BN", "LN-LN"})
    EXPECT_EQ(NormPolicy::parse(text).str(), text);
  EXPECT_THROW(NormPolicy::parse("GN-BN"), ConfigError);
}

// ---- construction ----

TEST(Build, TinyCifarProducesLogits) {
  auto model = Model<float>::build(variant_config("DHVT-T", "CIFAR", 4), 0);
  Rng rng(1);
  const auto logits = model.forward(random_tensor<float>({2, 3, 32, 32}, rng), Mode::kEval);
  EXPECT_EQ(logits.shape(), (Shape{2, 100}));
}

TEST(Build, SeedFixedBuildsAreBitwiseIdentical) {
  const auto cfg = micro_config();
  auto a = Model<double>::build(cfg, 42);
  auto b = Model<double>::build(cfg, 42);
  auto c = Model<double>::build(cfg, 43);
  ASSERT_EQ(a.params().size(), b.params().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& ea = a.params().entries()[i];
    const auto& eb = b.params().entries()[i];
    EXPECT_EQ(ea.name, eb.name);
    EXPECT_EQ(as_vec(ea.tensor), as_vec(eb.tensor)) << ea.name;
    differs |= as_vec(ea.tensor) != as_vec(c.params().entries()[i].tensor);
  }
  EXPECT_TRUE(differs);
}

TEST(Build, InitializationConventions) {
  auto model = Model<double>::build(micro_config(), 3);
  for (const auto& e : model.params().entries()) {
    const auto v = as_vec(e.tensor);
    const std::string& n = e.name;
    auto ends = [&](const std::string& s) {
      return n.size() >= s.size() && n.compare(n.size() - s.size(), s.size(), s) == 0;
    };
    if (ends("head_embed") || ends("running_mean") || (ends(".bias") && !ends("norm.bias"))) {
      for (double x : v) EXPECT_EQ(x, 0.0) << n;
    } else if (ends("running_var") || ends("alpha")) {
      for (double x : v) EXPECT_EQ(x, 1.0) << n;
    } else if (ends(".weight") && e.tensor.rank() >= 2) {
      for (double x : v) EXPECT_LE(std::abs(x), 0.04 + 1e-12) << n;
      const double mean_sq =
          std::inner_product(v.begin(), v.end(), v.begin(), 0.0) / static_cast<double>(v.size());
      // Std of N(0, 0.02^2) truncated at two sigma is 0.02 * 0.8796.
      if (v.size() >= 256) {
        EXPECT_NEAR(std::sqrt(mean_sq), 0.0176, 0.003) << n;
      }
    }
  }
  for (double x : as_vec(model.params().at("norm.weight"))) EXPECT_EQ(x, 1.0);
  EXPECT_EQ(model.params().at("cls_token").shape(), (Shape{1, 1, 16}));
}

TEST(Build, BaselineTopology) {
  ModelConfig cfg = baseline_of(variant_config("DHVT-T", "CIFAR", 4));
  auto model = Model<float>::build(cfg, 0);
  const auto& ps = model.params();
  EXPECT_TRUE(ps.contains("patch_embed.proj.weight"));
  EXPECT_EQ(ps.at("patch_embed.proj.weight").shape(), (Shape{192, 3, 4, 4}));
  EXPECT_EQ(ps.at("pos_embed").shape(), (Shape{1, 65, 192}));
  EXPECT_EQ(ps.at("blocks.0.mlp.fc1.weight").shape(), (Shape{768, 192}));
  EXPECT_FALSE(ps.contains("blocks.0.attn.head_embed"));
  EXPECT_EQ(cfg.num_heads, 4u);
  for (const auto& e : ps.entries()) EXPECT_EQ(e.name.find("running_"), std::string::npos) << e.name;
}

TEST(Build, FullModelHasNoPositionEmbedding) {
  auto model = Model<float>::build(micro_config(), 0);
  EXPECT_FALSE(model.params().contains("pos_embed"));
  EXPECT_TRUE(model.params().contains("blocks.0.attn.head_embed"));
  EXPECT_TRUE(model.params().contains("blocks.0.mlp.conv2.weight"));
}

TEST(Build, AblationLatticeIsConstructibleWithDistinctCounts) {
  const auto lattice = ablation_lattice(micro_config());
  ASSERT_EQ(lattice.size(), 10u);
  std::set<std::size_t> counts;
  std::set<std::string> names;
  Rng rng(4);
  const auto images = random_tensor<double>({2, 3, 8, 8}, rng);
  for (const auto& nc : lattice) {
    auto model = Model<double>::build(nc.config, 0);
    counts.insert(model.params().trainable_numel());
    names.insert(nc.name);
    EXPECT_EQ(model.forward(images, Mode::kEval).shape(), (Shape{2, 3})) << nc.name;
  }
  EXPECT_EQ(counts.size(), 10u);
  EXPECT_EQ(names.size(), 10u);
}

// ---- forward semantics ----

TEST(Forward, EvalIsDeterministic) {
  auto model = Model<double>::build(micro_config(), 5);
  Rng rng(6);
  const auto images = random_tensor<double>({2, 3, 8, 8}, rng);
  EXPECT_EQ(as_vec(model.forward(images, Mode::kEval)), as_vec(model.forward(images, Mode::kEval)));
}

TEST(Forward, ResolutionMismatchIsShapeError) {
  auto model = Model<double>::build(micro_config(), 0);
  EXPECT_THROW(model.forward(TD({1, 3, 16, 16}), Mode::kEval), ShapeError);
  EXPECT_THROW(model.forward(TD({1, 1, 8, 8}), Mode::kEval), ShapeError);
}

TEST(Forward, BlockIsCompositionOfSubOps) {
  for (bool daff : {true, false}) {
    ModelConfig cfg = micro_config();
    cfg.use_daff = daff;
    auto model = Model<double>::build(cfg, 7);
    Rng rng(8);
    const TokenBatch<double> x{random_tensor<double>({2, 5, 16}, rng)};
    auto& b = model.blocks()[0];
    const TD mid = ops::add(x.tokens, hi_mhsa_forward(b.attn, {b.norm1(x.tokens)}, Mode::kEval).tokens);
    const TD ffn = daff ? daff_forward(b.daff, {b.norm2(mid)}, Mode::kEval).tokens
                        : ffn_forward(b.ffn, {b.norm2(mid)}).tokens;
    const TD expected = ops::add(mid, ffn);
    EXPECT_EQ(as_vec(model.block_forward(0, x, Mode::kEval).tokens), as_vec(expected));
  }
}

TEST(Forward, LogitsComeFromNormedClassToken) {
  auto model = Model<double>::build(micro_config(), 9);
  Rng rng(10);
  const auto images = random_tensor<double>({2, 3, 8, 8}, rng);
  ForwardProbe<double> probe;
  const TD logits = model.forward(images, Mode::kEval, &probe);
  const auto& ps = model.params();
  const auto expected = oracle::linear(oracle::vec(probe.class_token), 2, 16,
                                       oracle::vec(ps.at("head.weight")), oracle::vec(ps.at("head.bias")), 3);
  EXPECT_LE(max_abs_diff(logits.values(), expected), 1e-12);
}

TEST(Forward, ZeroedOutputProjectionsMakeBlocksIdentity) {
  for (bool daff : {true, false}) {
    ModelConfig cfg = micro_config();
    cfg.depth = 2;
    cfg.use_daff = daff;
    auto model = Model<double>::build(cfg, 11);
    for (auto& e : model.params().entries()) {
      const std::string& n = e.name;
      const bool zero = n.find(".attn.proj.") != std::string::npos ||
                        n.find(".mlp.fc2.") != std::string::npos ||
                        n.find(".mlp.conv3.") != std::string::npos ||
                        n.find(".mlp.norm3.bias") != std::string::npos ||
                        n.find(".mlp.excitation.") != std::string::npos;
      if (zero)
        for (auto& v : e.tensor.mutable_values()) v = 0.0;
    }
    Rng rng(12);
    const auto images = random_tensor<double>({2, 3, 8, 8}, rng);
    const auto x = model.embed(images, Mode::kEval);
    auto y = x;
    for (std::size_t i = 0; i < cfg.depth; ++i) y = model.block_forward(i, y, Mode::kEval);
    EXPECT_EQ(as_vec(y.tokens), as_vec(x.tokens)) << (daff ? "daff" : "ffn");
  }
}

TEST(Forward, AttentionProbeRecordsEveryBlock) {
  ModelConfig cfg = micro_config();
  cfg.depth = 3;
  auto model = Model<double>::build(cfg, 0);
  ForwardProbe<double> probe;
  probe.capture_attention = true;
  model.forward(TD({1, 3, 8, 8}), Mode::kEval, &probe);
  ASSERT_EQ(probe.attention.size(), 3u);
  for (const auto& a : probe.attention) EXPECT_EQ(a.shape(), (Shape{1, 2, 7, 7}));
}

// ---- feed-forward ablation variants ----

class FfnOracle : public ::testing::TestWithParam<FfnVariant> {};

TEST_P(FfnOracle, MatchesReference) {
  const FfnVariant variant = GetParam();
  ParamStore<double> store;
  Rng rng(13);
  const auto p = ffn_init(ParamBuilder<double>(store, rng), variant, 8, 12, 4);
  for (auto& e : store.entries())
    if (e.trainable)
      for (auto& v : e.tensor.mutable_values()) v = rng.uniform(-0.5, 0.5);
  const std::size_t B = 2, S = 3, L = 1 + S * S, D = 8, H = 12;
  const TD x = random_tensor<double>({B, L, D}, rng);
  const TD y = ffn_forward(p, {x}).tokens;
  ASSERT_EQ(y.shape(), x.shape());
  const oracle::Vec xv = oracle::vec(x);
  auto fc = [&](const oracle::Vec& in, std::size_t rows, const Linear<double>& l, std::size_t i, std::size_t o) {
    return oracle::linear(in, rows, i, oracle::vec(l.weight), oracle::vec(l.bias), o);
  };
  oracle::Vec expected(xv.size());
  if (variant == FfnVariant::kVanilla) {
    expected = fc(oracle::map_gelu(fc(xv, B * L, p.fc1, D, H)), B * L, p.fc2, H, D);
  } else {
    for (std::size_t b = 0; b < B; ++b) {
      const oracle::Vec patches(xv.begin() + (b * L + 1) * D, xv.begin() + (b + 1) * L * D);
      oracle::Vec h = oracle::map_gelu(fc(patches, S * S, p.fc1, D, H));
      if (variant == FfnVariant::kSplitClsAvgPool) {
        oracle::Vec pooled(h.size(), 0.0);
        for (std::size_t i = 0; i < S; ++i)
          for (std::size_t j = 0; j < S; ++j)
            for (std::size_t c = 0; c < H; ++c) {
              double s = 0.0;
              for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                  const long ii = long(i) + di, jj = long(j) + dj;
                  if (ii >= 0 && jj >= 0 && ii < long(S) && jj < long(S)) s += h[(ii * S + jj) * H + c];
                }
              pooled[(i * S + j) * H + c] = s / 9.0;
            }
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += pooled[i];
      }
      const oracle::Vec out = fc(h, S * S, p.fc2, H, D);
      oracle::Vec w(D, 1.0);
      if (variant == FfnVariant::kSplitClsAgg) {
        oracle::Vec mean(D, 0.0);
        for (std::size_t t = 0; t < S * S; ++t)
          for (std::size_t c = 0; c < D; ++c) mean[c] += out[t * D + c] / double(S * S);
        w = fc(oracle::map_gelu(fc(mean, 1, p.compress, D, D / 4)), 1, p.excitation, D / 4, D);
      }
      for (std::size_t c = 0; c < D; ++c) expected[b * L * D + c] = xv[b * L * D + c] * w[c];
      std::copy(out.begin(), out.end(), expected.begin() + (b * L + 1) * D);
    }
  }
  EXPECT_LE(max_abs_diff(y.values(), expected), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Variants, FfnOracle,
                         ::testing::Values(FfnVariant::kVanilla, FfnVariant::kSplitCls,
                                           FfnVariant::kSplitClsAgg, FfnVariant::kSplitClsAvgPool));

TEST(FfnVariants, NamesRoundTrip) {
  for (FfnVariant v : {FfnVariant::kVanilla, FfnVariant::kSplitCls, FfnVariant::kSplitClsAgg,
                       FfnVariant::kSplitClsAvgPool})
    EXPECT_EQ(parse_ffn_variant(ffn_variant_name(v)), v);
  EXPECT_THROW(parse_ffn_variant("bogus"), ConfigError);
}

// ---- gradients ----

TEST(Gradients, ReachEveryParameter) {
  for (const auto& nc : ablation_lattice(micro_config())) {
    auto model = Model<double>::build(nc.config, 14);
    Rng rng(15);
    const auto images = random_tensor<double>({4, 3, 8, 8}, rng);
    {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      tape.backward(ops::cross_entropy(model.forward(images, Mode::kTrain), {0, 1, 2, 0}));
    }
    for (const auto& e : model.params().entries()) {
      if (!e.trainable || e.name.find("head_embed") != std::string::npos) continue;
      bool nonzero = false;
      if (e.tensor.has_grad())
        for (double g : e.tensor.grad()) nonzero |= g != 0.0;
      EXPECT_TRUE(nonzero) << nc.name << ": " << e.name;
    }
  }
}

TEST(Gradients, MicroModelPassesFiniteDifferenceCheck) {
  GradcheckOptions options;
  const auto report = gradcheck(micro_config(), options);
  EXPECT_GE(report.checked, 200u);
  EXPECT_LE(report.max_rel_error, 1e-4) << report.to_text();
  EXPECT_TRUE(report.passed);
}

}  // namespace
}  // namespace dhvt
