#include "dhvt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "dhvt/error.hpp"
#include "dhvt/run_config.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace dhvt {
namespace {

constexpr char kMagic[4] = {'D', 'H', 'V', 'T'};
constexpr std::size_t kHeader = 8;  // magic + version

class Writer {
 public:
  template <typename V>
  void put(V value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  template <typename V>
  V get() {
    V value;
    std::memcpy(&value, take(sizeof(V)), sizeof(V));
    return value;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > end_ - pos_)
      throw FormatError("checkpoint payload ends early at byte " + std::to_string(pos_));
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_;
  std::size_t end_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  w.put_string(to_json(cfg).dump());
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.put_string(e.name);
    w.put(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
    w.put(static_cast<std::uint8_t>(dtype_of<T>() == Dtype::kF32 ? 0 : 1));
    w.put_bytes(e.tensor.data(), e.tensor.numel() * sizeof(T));
  }
  w.put(crc_of(w.bytes.data() + kHeader, w.bytes.size() - kHeader));
  return std::move(w.bytes);
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeader + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a checkpoint: bad magic bytes");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const std::size_t end = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + end, 4);
  if (crc_of(bytes.data() + kHeader, end - kHeader) != stored_crc)
    throw FormatError("checkpoint CRC32 mismatch: payload is corrupted");

  Reader r(bytes, kHeader, end);
  Checkpoint<T> ck;
  try {
    ck.config = model_config_from_json(nlohmann::json::parse(r.get_string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 1) throw FormatError("tensor '" + name + "' has unknown dtype tag " + std::to_string(tag));
    Tensor<T> t(shape);
    auto out = t.mutable_values();
    const std::size_t width = tag == 0 ? 4 : 8;
    const std::uint8_t* raw = r.take(out.size() * width);
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (tag == 0) {
        float v;
        std::memcpy(&v, raw + k * 4, 4);
        out[k] = static_cast<T>(v);
      } else {
        double v;
        std::memcpy(&v, raw + k * 8, 8);
        out[k] = static_cast<T>(v);
      }
    }
    const bool trainable = name.find("running_") == std::string::npos;
    ck.params.add(std::move(name), t, trainable);
  }
  if (!r.done()) throw FormatError("trailing bytes after the last checkpoint tensor");
  return ck;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, cfg);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint<T>(bytes);
}

template <typename T>
void restore(Model<T>& model, const ParamStore<T>& stored) {
  auto& entries = model.params().entries();
  if (entries.size() != stored.size())
    throw ConsistencyError("checkpoint holds " + std::to_string(stored.size()) +
                           " tensors but the config implies " + std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = stored.entries()[i];
    auto& dst = entries[i];
    if (src.name != dst.name)
      throw ConsistencyError("checkpoint tensor " + std::to_string(i) + " is '" + src.name +
                             "', config expects '" + dst.name + "'");
    if (src.tensor.shape() != dst.tensor.shape())
      throw ConsistencyError("tensor '" + src.name + "' has shape " +
                             shape_str(src.tensor.shape()) + ", config expects " +
                             shape_str(dst.tensor.shape()));
    const auto v = src.tensor.values();
    std::copy(v.begin(), v.end(), dst.tensor.mutable_values().begin());
  }
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path) {
  Checkpoint<T> ck = load_checkpoint<T>(path);
  Model<T> model = Model<T>::build(ck.config, 0);
  restore(model, ck.params);
  return model;
}

#define DHVT_INSTANTIATE(T)                                                                      \
  template std::vector<std::uint8_t> encode_checkpoint(const ParamStore<T>&, const ModelConfig&); \
  template Checkpoint<T> decode_checkpoint<T>(const std::vector<std::uint8_t>&);                 \
  template void save_checkpoint(const ParamStore<T>&, const ModelConfig&,                        \
                                const std::filesystem::path&);                                   \
  template Checkpoint<T> load_checkpoint<T>(const std::filesystem::path&);                       \
  template void restore(Model<T>&, const ParamStore<T>&);                                        \
  template Model<T> load_model<T>(const std::filesystem::path&);
DHVT_INSTANTIATE(float)
DHVT_INSTANTIATE(double)
#undef DHVT_INSTANTIATE

}  // namespace dhvt
