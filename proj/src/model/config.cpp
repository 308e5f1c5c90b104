#include "dhvt/config.hpp"

#include <cmath>
#include <sstream>

#include "dhvt/error.hpp"

namespace dhvt {

std::string NormPolicy::str() const {
  auto name = [](NormKind k) { return k == NormKind::kBatch ? "BN" : "LN"; };
  return std::string(name(embed)) + "-" + name(ffn);
}

NormPolicy NormPolicy::parse(std::string_view text) {
  auto kind = [&](std::string_view part) {
    if (part == "BN") return NormKind::kBatch;
    if (part == "LN") return NormKind::kLayer;
    throw ConfigError("norm_policy '" + std::string(text) +
                      "' is not one of BN-BN, BN-LN, LN-BN, LN-LN");
  };
  if (text.size() != 5 || text[2] != '-')
    throw ConfigError("norm_policy '" + std::string(text) +
                      "' is not one of BN-BN, BN-LN, LN-BN, LN-LN");
  return NormPolicy{kind(text.substr(0, 2)), kind(text.substr(3, 2))};
}

std::string_view ffn_variant_name(FfnVariant variant) {
  switch (variant) {
    case FfnVariant::kVanilla: return "vanilla";
    case FfnVariant::kSplitCls: return "split_cls";
    case FfnVariant::kSplitClsAgg: return "split_cls_agg";
    case FfnVariant::kSplitClsAvgPool: return "split_cls_avgpool";
  }
  return "vanilla";
}

FfnVariant parse_ffn_variant(std::string_view text) {
  for (FfnVariant v : {FfnVariant::kVanilla, FfnVariant::kSplitCls, FfnVariant::kSplitClsAgg,
                       FfnVariant::kSplitClsAvgPool})
    if (ffn_variant_name(v) == text) return v;
  throw ConfigError("ffn_variant '" + std::string(text) +
                    "' is not one of vanilla, split_cls, split_cls_agg, split_cls_avgpool");
}

std::size_t ModelConfig::hidden_dim() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
}

void validate(const ModelConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (cfg.embed_dim == 0 || cfg.depth == 0 || cfg.num_heads == 0 || cfg.num_classes == 0 ||
      cfg.in_channels == 0)
    fail("embed_dim, depth, num_heads, num_classes and in_channels must be positive");
  if (cfg.embed_dim % cfg.num_heads != 0)
    fail("embed_dim " + std::to_string(cfg.embed_dim) + " is not divisible by num_heads " +
         std::to_string(cfg.num_heads));
  if (cfg.patch_size == 0 || cfg.image_height % cfg.patch_size != 0 ||
      cfg.image_width % cfg.patch_size != 0 || cfg.image_height == 0 || cfg.image_width == 0)
    fail("image " + std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width) +
         " is not divisible by patch_size " + std::to_string(cfg.patch_size));
  const double hidden = cfg.mlp_ratio * static_cast<double>(cfg.embed_dim);
  if (hidden < 1.0 || std::abs(hidden - std::round(hidden)) > 1e-9)
    fail("mlp_ratio * embed_dim = " + std::to_string(hidden) + " is not a positive integer");
  if (cfg.se_ratio == 0 || cfg.embed_dim % cfg.se_ratio != 0)
    fail("embed_dim " + std::to_string(cfg.embed_dim) + " is not divisible by se_ratio " +
         std::to_string(cfg.se_ratio));
  if (cfg.use_sope) {
    const std::size_t p = cfg.patch_size;
    if (p != 2 && p != 4 && p != 16)
      fail("convolutional patch embedding supports patch sizes 2, 4 and 16, got " +
           std::to_string(p));
    if (p == 16 && cfg.embed_dim % 8 != 0) fail("patch 16 needs embed_dim divisible by 8");
    if (p == 4 && cfg.embed_dim % 2 != 0) fail("patch 4 needs embed_dim divisible by 2");
  }
  const bool needs_grid = cfg.use_daff || cfg.ffn_variant == FfnVariant::kSplitClsAvgPool;
  if (needs_grid && cfg.grid_height() != cfg.grid_width())
    fail("convolutional feed-forward needs a square patch grid, got " +
         std::to_string(cfg.grid_height()) + "x" + std::to_string(cfg.grid_width()));
  if (cfg.attn_dropout < 0.0 || cfg.attn_dropout >= 1.0) fail("attn_dropout must be in [0, 1)");
}

const std::vector<VariantSpec>& reference_variants() {
  static const std::vector<VariantSpec> rows = {
      {"DHVT-T", "CIFAR", 4, 6.0, 0.4},     {"DHVT-T", "CIFAR", 2, 5.8, 1.4},
      {"DHVT-S", "CIFAR", 4, 23.4, 1.5},    {"DHVT-S", "CIFAR", 2, 22.8, 5.6},
      {"DHVT-T", "Domain", 16, 6.1, 1.2},   {"DHVT-S", "Domain", 16, 23.8, 4.7},
      {"DHVT-T", "ImageNet", 16, 6.2, 1.2}, {"DHVT-S", "ImageNet", 16, 24.1, 4.7},
  };
  return rows;
}

ModelConfig variant_config(std::string_view model, std::string_view dataset, std::size_t patch) {
  bool known = false;
  for (const auto& row : reference_variants())
    if (row.model == model && row.dataset == dataset && row.patch == patch) known = true;
  if (!known) {
    std::ostringstream msg;
    msg << "unknown variant (" << model << ", " << dataset << ", " << patch << "); valid:";
    for (const auto& row : reference_variants())
      msg << " (" << row.model << ", " << row.dataset << ", " << row.patch << ")";
    throw ConfigError(msg.str());
  }
  ModelConfig cfg;
  const bool small = model == "DHVT-S";
  cfg.embed_dim = small ? 384 : 192;
  cfg.depth = 12;
  cfg.mlp_ratio = 4.0;
  cfg.se_ratio = 4;
  cfg.patch_size = patch;
  if (dataset == "CIFAR") {
    cfg.image_height = cfg.image_width = 32;
    cfg.num_heads = small ? 8 : 4;
    cfg.num_classes = 100;
  } else if (dataset == "Domain") {
    cfg.image_height = cfg.image_width = 224;
    cfg.num_heads = small ? 6 : 4;
    cfg.num_classes = 345;
  } else {
    cfg.image_height = cfg.image_width = 224;
    cfg.num_heads = small ? 6 : 3;
    cfg.num_classes = 1000;
  }
  return cfg;
}

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.image_height = cfg.image_width = 8;
  cfg.patch_size = 4;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 4.0;
  cfg.se_ratio = 4;
  cfg.num_classes = 3;
  return cfg;
}

ModelConfig desk_config(std::size_t num_classes) {
  ModelConfig cfg;
  cfg.image_height = cfg.image_width = 32;
  cfg.patch_size = 4;
  cfg.embed_dim = 32;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.se_ratio = 4;
  cfg.num_classes = num_classes;
  return cfg;
}

ModelConfig baseline_of(ModelConfig cfg) {
  cfg.use_sope = false;
  cfg.use_daff = false;
  cfg.use_head_token = false;
  cfg.use_abs_pos_embed = true;
  cfg.ffn_variant = FfnVariant::kVanilla;
  return cfg;
}

std::vector<NamedConfig> ablation_lattice(const ModelConfig& base) {
  auto named = [](const ModelConfig& c) {
    auto flag = [](bool on, const char* what) { return std::string(on ? "+" : "-") + what; };
    return flag(c.use_abs_pos_embed, "abspe") + flag(c.use_sope, "sope") +
           flag(c.use_daff, "daff") + flag(c.use_head_token, "ht");
  };
  std::vector<NamedConfig> out;
  const ModelConfig baseline = baseline_of(base);
  for (bool sope : {false, true})
    for (bool daff : {false, true})
      for (bool abs_pe : {true, false}) {
        ModelConfig c = baseline;
        c.use_abs_pos_embed = abs_pe;
        c.use_sope = sope;
        c.use_daff = daff;
        out.push_back({named(c), c});
      }
  ModelConfig with_heads = baseline;
  with_heads.use_head_token = true;
  out.push_back({named(with_heads), with_heads});
  ModelConfig full = baseline;
  full.use_abs_pos_embed = false;
  full.use_sope = full.use_daff = full.use_head_token = true;
  out.push_back({named(full), full});
  return out;
}

}  // namespace dhvt
