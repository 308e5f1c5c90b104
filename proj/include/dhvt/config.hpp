#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dhvt {

enum class NormKind { kBatch, kLayer };

// Normalization used inside the convolutional parts of the model, written
// "<embedding>-<feed-forward>", e.g. "BN-LN".
struct NormPolicy {
  NormKind embed = NormKind::kBatch;
  NormKind ffn = NormKind::kBatch;

  std::string str() const;
  static NormPolicy parse(std::string_view text);
  bool operator==(const NormPolicy&) const = default;
};

// Feed-forward used when use_daff is false.
enum class FfnVariant {
  kVanilla,          // Linear-GELU-Linear on every token
  kSplitCls,         // class token bypasses the FFN
  kSplitClsAgg,      // ... and is recalibrated by squeeze-excitation of the patch output
  kSplitClsAvgPool,  // ... patch tokens get a 3x3 average-pool shortcut after the first linear
};

std::string_view ffn_variant_name(FfnVariant variant);
FfnVariant parse_ffn_variant(std::string_view text);

struct ModelConfig {
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t in_channels = 3;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 192;
  std::size_t depth = 12;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  std::size_t se_ratio = 4;
  std::size_t num_classes = 100;

  bool use_sope = true;
  bool use_affine = true;
  bool use_abs_pos_embed = false;
  bool use_daff = true;
  bool use_head_token = true;
  bool agg_on_all_tokens = false;
  bool disable_dw_shortcut = false;
  FfnVariant ffn_variant = FfnVariant::kVanilla;
  double attn_dropout = 0.0;
  NormPolicy norm_policy;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t hidden_dim() const;
  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_height() * grid_width(); }

  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError naming the first violated constraint.
void validate(const ModelConfig& cfg);

// One row of the reference model-variant table.
struct VariantSpec {
  std::string model;    // "DHVT-T" or "DHVT-S"
  std::string dataset;  // "CIFAR", "Domain" or "ImageNet"
  std::size_t patch;
  double params_millions;
  double gflops;
};

const std::vector<VariantSpec>& reference_variants();

// Exact configuration of a reference variant. Throws ConfigError listing the
// valid combinations when the triple is unknown.
ModelConfig variant_config(std::string_view model, std::string_view dataset, std::size_t patch);

// 8x8 input, patch 4, dim 16, one block, two heads, three classes: the
// configuration used for gradient checks.
ModelConfig micro_config();

// 32x32 input, patch 4, dim 32, one block, two heads: a desk-scale model that
// trains in seconds on one core.
ModelConfig desk_config(std::size_t num_classes);

// The convolution-free reference: linear patch projection, absolute position
// embedding, plain FFN, no head tokens.
ModelConfig baseline_of(ModelConfig cfg);

struct NamedConfig {
  std::string name;
  ModelConfig config;
};

// The eight (abs PE x SOPE x DAFF) combinations without head tokens, followed
// by the two head-token rows of the head-token ablation: baseline + head
// tokens, and the full model. Names read like "abspe+sope-daff-ht".
std::vector<NamedConfig> ablation_lattice(const ModelConfig& base);

}  // namespace dhvt
