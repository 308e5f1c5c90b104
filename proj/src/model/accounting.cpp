#include "dhvt/accounting.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dhvt/model.hpp"
#include "dhvt/sope.hpp"

namespace dhvt {
namespace {

std::string name_prefix(const std::string& name, std::size_t depth) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    pos = name.find('.', pos);
    if (pos == std::string::npos) return name;
    ++pos;
  }
  return name.substr(0, pos - 1);
}

const char* kind_name(CostKind kind) {
  switch (kind) {
    case CostKind::kTensor: return "tensor";
    case CostKind::kLayer: return "layer";
    case CostKind::kAttention: return "attention";
  }
  return "?";
}

class MacCounter {
 public:
  explicit MacCounter(std::vector<CostEntry>& out) : out_(&out) {}

  void conv(const std::string& name, std::uint64_t cin, std::uint64_t cout, std::uint64_t groups,
            std::uint64_t kernel, std::uint64_t out_h, std::uint64_t out_w) {
    add(name, cout * (cin / groups) * kernel * kernel * out_h * out_w, CostKind::kLayer);
  }
  void linear(const std::string& name, std::uint64_t in, std::uint64_t out,
              std::uint64_t tokens) {
    add(name, in * out * tokens, CostKind::kLayer);
  }
  void attention(const std::string& name, std::uint64_t macs) {
    add(name, macs, CostKind::kAttention);
  }

 private:
  void add(const std::string& name, std::uint64_t macs, CostKind kind) {
    out_->push_back(CostEntry{name, 0, macs, kind});
  }
  std::vector<CostEntry>* out_;
};

}  // namespace

std::uint64_t CostReport::total_params() const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.params;
  return n;
}

std::uint64_t CostReport::total_macs() const {
  std::uint64_t n = 0;
  for (const auto& e : entries) n += e.macs;
  return n;
}

std::uint64_t CostReport::layer_macs() const {
  std::uint64_t n = 0;
  for (const auto& e : entries)
    if (e.kind != CostKind::kAttention) n += e.macs;
  return n;
}

std::vector<CostEntry> CostReport::rollup(std::size_t depth) const {
  std::vector<CostEntry> rows;
  std::map<std::pair<std::string, CostKind>, std::size_t> index;
  for (const auto& e : entries) {
    const CostKind group = e.kind == CostKind::kAttention ? CostKind::kAttention : CostKind::kLayer;
    const std::string key = group == CostKind::kAttention ? e.name : name_prefix(e.name, depth);
    auto [it, fresh] = index.try_emplace({key, group}, rows.size());
    if (fresh) rows.push_back(CostEntry{key, 0, 0, group});
    rows[it->second].params += e.params;
    rows[it->second].macs += e.macs;
  }
  return rows;
}

std::string CostReport::to_text(std::size_t depth) const {
  const auto rows = rollup(depth);
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s %14s %16s\n", static_cast<int>(width), "name", "params",
                "MACs");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-*s %14llu %16llu%s\n", static_cast<int>(width),
                  r.name.c_str(), static_cast<unsigned long long>(r.params),
                  static_cast<unsigned long long>(r.macs),
                  r.kind == CostKind::kAttention ? "  (attention)" : "");
    os << line;
  }
  std::snprintf(line, sizeof line,
                "total params %llu (%.2fM)\nlayer MACs %llu (%.3f G)\n"
                "attention MACs %llu (%.3f G)\ntotal MACs %llu (%.3f G)\n",
                static_cast<unsigned long long>(total_params()), total_params() / 1e6,
                static_cast<unsigned long long>(layer_macs()), layer_macs() / 1e9,
                static_cast<unsigned long long>(attention_macs()), attention_macs() / 1e9,
                static_cast<unsigned long long>(total_macs()), total_macs() / 1e9);
  os << line;
  return os.str();
}

std::string CostReport::to_json(std::size_t depth) const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rollup(depth))
    rows.push_back({{"name", r.name}, {"params", r.params}, {"macs", r.macs},
                    {"kind", kind_name(r.kind)}});
  nlohmann::json doc = {{"total_params", total_params()},
                        {"layer_macs", layer_macs()},
                        {"attention_macs", attention_macs()},
                        {"total_macs", total_macs()},
                        {"entries", rows}};
  return doc.dump(2);
}

template <typename T>
CostReport count_params(const ParamStore<T>& store) {
  CostReport report;
  for (const auto& e : store.entries())
    if (e.trainable) report.entries.push_back(CostEntry{e.name, e.tensor.numel(), 0, CostKind::kTensor});
  return report;
}

CostReport count_macs(const ModelConfig& cfg) {
  validate(cfg);
  CostReport report;
  report.config = cfg;
  MacCounter mc(report.entries);
  const std::uint64_t dim = cfg.embed_dim;
  const std::uint64_t patches = cfg.num_patches();
  const std::uint64_t tokens = patches + 1;
  const std::uint64_t hidden = cfg.hidden_dim();

  if (cfg.use_sope) {
    const auto widths = sope_channel_widths(cfg.in_channels, cfg.patch_size, cfg.embed_dim);
    std::uint64_t h = cfg.image_height;
    std::uint64_t w = cfg.image_width;
    for (std::size_t s = 0; s + 1 < widths.size(); ++s) {
      h /= 2;
      w /= 2;
      mc.conv("patch_embed.stages." + std::to_string(s) + ".conv", widths[s], widths[s + 1], 1, 3,
              h, w);
    }
  } else {
    mc.conv("patch_embed.proj", cfg.in_channels, dim, 1, cfg.patch_size, cfg.grid_height(),
            cfg.grid_width());
  }

  const std::uint64_t heads = cfg.num_heads;
  const std::uint64_t seq = tokens + (cfg.use_head_token ? heads : 0);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    if (cfg.use_head_token) mc.linear(b + ".attn.ht_proj", dim / heads, dim, heads);
    mc.linear(b + ".attn.qkv", dim, 3 * dim, seq);
    mc.attention(b + ".attn.q@k", seq * seq * dim);
    mc.attention(b + ".attn.attn@v", seq * seq * dim);
    mc.linear(b + ".attn.proj", dim, dim, seq);
    const std::string m = b + ".mlp";
    if (cfg.use_daff) {
      const std::uint64_t gh = cfg.grid_height();
      const std::uint64_t gw = cfg.grid_width();
      mc.conv(m + ".conv1", dim, hidden, 1, 1, gh, gw);
      mc.conv(m + ".conv2", hidden, hidden, hidden, 3, gh, gw);
      mc.conv(m + ".conv3", hidden, dim, 1, 1, gh, gw);
      mc.linear(m + ".compress", dim, dim / cfg.se_ratio, 1);
      mc.linear(m + ".excitation", dim / cfg.se_ratio, dim, 1);
    } else {
      const std::uint64_t ffn_tokens = cfg.ffn_variant == FfnVariant::kVanilla ? tokens : patches;
      mc.linear(m + ".fc1", dim, hidden, ffn_tokens);
      mc.linear(m + ".fc2", hidden, dim, ffn_tokens);
      if (cfg.ffn_variant == FfnVariant::kSplitClsAgg) {
        mc.linear(m + ".compress", dim, dim / cfg.se_ratio, 1);
        mc.linear(m + ".excitation", dim / cfg.se_ratio, dim, 1);
      }
    }
  }
  mc.linear("head", dim, cfg.num_classes, 1);
  return report;
}

CostReport count_cost(const ModelConfig& cfg) {
  CostReport report = count_macs(cfg);
  const Model<float> model = Model<float>::build(cfg, 0);
  const CostReport params = count_params(model.params());
  for (const auto& e : params.entries) report.entries.push_back(e);
  return report;
}

template CostReport count_params(const ParamStore<float>&);
template CostReport count_params(const ParamStore<double>&);

}  // namespace dhvt
