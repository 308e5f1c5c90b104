#include "dhvt/run_config.hpp"

#include <fstream>
#include <set>

#include "dhvt/error.hpp"

namespace dhvt {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (known.count(key) == 0)
      throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"image_height", c.image_height},
              {"image_width", c.image_width},
              {"in_channels", c.in_channels},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"num_heads", c.num_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"se_ratio", c.se_ratio},
              {"num_classes", c.num_classes},
              {"use_sope", c.use_sope},
              {"use_affine", c.use_affine},
              {"use_abs_pos_embed", c.use_abs_pos_embed},
              {"use_daff", c.use_daff},
              {"use_head_token", c.use_head_token},
              {"agg_on_all_tokens", c.agg_on_all_tokens},
              {"disable_dw_shortcut", c.disable_dw_shortcut},
              {"ffn_variant", std::string(ffn_variant_name(c.ffn_variant))},
              {"attn_dropout", c.attn_dropout},
              {"norm_policy", c.norm_policy.str()}};
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "image_height", "image_width",     "in_channels",       "patch_size",
      "embed_dim",    "depth",           "num_heads",         "mlp_ratio",
      "se_ratio",     "num_classes",     "use_sope",          "use_affine",
      "use_abs_pos_embed", "use_daff",   "use_head_token",    "agg_on_all_tokens",
      "disable_dw_shortcut", "ffn_variant", "attn_dropout",   "norm_policy"};
  reject_unknown(j, known, "model");
  ModelConfig c;
  read(j, "image_height", c.image_height);
  read(j, "image_width", c.image_width);
  read(j, "in_channels", c.in_channels);
  read(j, "patch_size", c.patch_size);
  read(j, "embed_dim", c.embed_dim);
  read(j, "depth", c.depth);
  read(j, "num_heads", c.num_heads);
  read(j, "mlp_ratio", c.mlp_ratio);
  read(j, "se_ratio", c.se_ratio);
  read(j, "num_classes", c.num_classes);
  read(j, "use_sope", c.use_sope);
  read(j, "use_affine", c.use_affine);
  read(j, "use_abs_pos_embed", c.use_abs_pos_embed);
  read(j, "use_daff", c.use_daff);
  read(j, "use_head_token", c.use_head_token);
  read(j, "agg_on_all_tokens", c.agg_on_all_tokens);
  read(j, "disable_dw_shortcut", c.disable_dw_shortcut);
  read(j, "attn_dropout", c.attn_dropout);
  if (j.contains("ffn_variant")) {
    std::string name;
    read(j, "ffn_variant", name);
    c.ffn_variant = parse_ffn_variant(name);
  }
  if (j.contains("norm_policy")) {
    std::string name;
    read(j, "norm_policy", name);
    c.norm_policy = NormPolicy::parse(name);
  }
  validate(c);
  return c;
}

ModelConfig variant_from_name(const std::string& name) {
  const auto a = name.find('/');
  const auto b = a == std::string::npos ? a : name.find('/', a + 1);
  if (b == std::string::npos)
    throw ConfigError("variant name '" + name + "' is not of the form MODEL/DATASET/PATCH");
  std::size_t patch = 0;
  try {
    patch = std::stoul(name.substr(b + 1));
  } catch (const std::exception&) {
    throw ConfigError("variant name '" + name + "' has a non-numeric patch size");
  }
  return variant_config(name.substr(0, a), name.substr(a + 1, b - a - 1), patch);
}

json to_json(const RunConfig& rc) {
  const DataSpec& d = rc.data;
  json data = {{"kind", d.kind == DataSpec::Kind::kCifar ? "cifar" : "synthetic"},
               {"classes", d.classes},
               {"samples", d.samples},
               {"size", d.size},
               {"seed", d.seed},
               {"mean", d.norm.mean},
               {"std", d.norm.stddev}};
  if (d.kind == DataSpec::Kind::kCifar) data["cifar_dir"] = d.cifar_dir.string();
  return json{{"model", to_json(rc.model)},
              {"data", data},
              {"epochs", rc.epochs},
              {"batch_size", rc.batch_size},
              {"base_lr", rc.base_lr},
              {"weight_decay", rc.weight_decay},
              {"warmup_epochs", rc.warmup_epochs},
              {"seed", rc.seed},
              {"dtype", dtype_name(rc.dtype)},
              {"flip", rc.flip},
              {"crop", rc.crop},
              {"stop_at_perfect", rc.stop_at_perfect},
              {"out_dir", rc.out_dir.string()}};
}

RunConfig run_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "model", "data",  "epochs", "batch_size", "base_lr",         "weight_decay", "warmup_epochs",
      "seed",  "dtype", "flip",   "crop",       "stop_at_perfect", "out_dir"};
  reject_unknown(j, known, "run config");
  RunConfig rc;
  if (j.contains("model")) {
    const json& m = j.at("model");
    rc.model = m.is_string() ? variant_from_name(m.get<std::string>()) : model_config_from_json(m);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"kind", "cifar_dir", "classes", "samples", "size", "seed", "mean", "std"},
                   "data");
    std::string kind = "synthetic";
    read(d, "kind", kind);
    if (kind == "cifar") {
      rc.data.kind = DataSpec::Kind::kCifar;
    } else if (kind != "synthetic") {
      throw ConfigError("data kind '" + kind + "' is not one of synthetic, cifar");
    }
    std::string dir;
    read(d, "cifar_dir", dir);
    rc.data.cifar_dir = dir;
    read(d, "classes", rc.data.classes);
    read(d, "samples", rc.data.samples);
    read(d, "size", rc.data.size);
    read(d, "seed", rc.data.seed);
    read(d, "mean", rc.data.norm.mean);
    read(d, "std", rc.data.norm.stddev);
  }
  read(j, "epochs", rc.epochs);
  read(j, "batch_size", rc.batch_size);
  read(j, "base_lr", rc.base_lr);
  read(j, "weight_decay", rc.weight_decay);
  read(j, "warmup_epochs", rc.warmup_epochs);
  read(j, "seed", rc.seed);
  if (j.contains("dtype")) {
    std::string dt;
    read(j, "dtype", dt);
    if (dt == "f32") {
      rc.dtype = Dtype::kF32;
    } else if (dt == "f64") {
      rc.dtype = Dtype::kF64;
    } else {
      throw ConfigError("dtype '" + dt + "' is not one of f32, f64");
    }
  }
  read(j, "flip", rc.flip);
  read(j, "crop", rc.crop);
  read(j, "stop_at_perfect", rc.stop_at_perfect);
  std::string out;
  read(j, "out_dir", out);
  rc.out_dir = out;
  if (rc.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (rc.epochs == 0) throw ConfigError("epochs must be positive");
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void save_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace dhvt
