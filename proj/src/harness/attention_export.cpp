#include "dhvt/attention_export.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dhvt/error.hpp"

namespace dhvt {

void write_pgm(const std::filesystem::path& path, const PgmImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n" << image.maxval << "\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("short write to " + path.string());
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes(std::istreambuf_iterator<char>(in), {});
  std::size_t pos = 0;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw FormatError("PGM header: expected a number at byte " + std::to_string(pos));
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("not a binary PGM (P5): " + path.string());
  pos = 2;
  PgmImage img;
  img.width = number();
  img.height = number();
  img.maxval = number();
  if (img.maxval == 0 || img.maxval > 255) throw FormatError("PGM maxval must be in 1..255");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("PGM header must end with one whitespace byte");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n)
    throw FormatError("PGM raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(n));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  for (auto p : img.pixels)
    if (p > img.maxval) throw FormatError("PGM pixel exceeds maxval");
  return img;
}

PgmImage to_pgm(const std::vector<double>& values, std::size_t width, std::size_t height) {
  if (values.size() != width * height)
    throw ShapeError("PGM map has " + std::to_string(values.size()) + " values for " +
                     std::to_string(width) + "x" + std::to_string(height));
  PgmImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(values.size(), 0);
  if (values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return img;
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  return img;
}

template <typename T>
std::vector<std::filesystem::path> export_attention(Model<T>& model, const Tensor<T>& image,
                                                    const std::vector<std::size_t>& layers,
                                                    const std::filesystem::path& out_dir) {
  const ModelConfig& cfg = model.config();
  for (std::size_t l : layers)
    if (l >= cfg.depth)
      throw ContractError("layer " + std::to_string(l) + " out of range; valid layers are 0.." +
                          std::to_string(cfg.depth - 1));
  if (image.rank() != 4 || image.dim(0) != 1)
    throw ShapeError("attention export expects one image (1, C, H, W), got " +
                     shape_str(image.shape()));

  ForwardProbe<T> probe;
  probe.capture_attention = true;
  model.forward(image, Mode::kEval, &probe);
  std::filesystem::create_directories(out_dir);

  std::vector<std::filesystem::path> written;
  const std::size_t heads = cfg.num_heads;
  const std::size_t patches = cfg.num_patches();
  for (std::size_t l : layers) {
    const Tensor<T>& attn = probe.attention.at(l);  // [1, h, S, S]
    const std::size_t s = attn.dim(2);
    const auto v = attn.values();

    const auto csv_path = out_dir / ("layer" + std::to_string(l) + "_attn.csv");
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    char cell[32];
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = 0; j < s; ++j) {
        double avg = 0.0;
        for (std::size_t h = 0; h < heads; ++h) avg += static_cast<double>(v[(h * s + i) * s + j]);
        std::snprintf(cell, sizeof cell, "%.9g", avg / static_cast<double>(heads));
        csv << (j ? "," : "") << cell;
      }
      csv << "\n";
    }
    written.push_back(csv_path);

    if (!cfg.use_head_token) continue;
    for (std::size_t j = 0; j < heads; ++j) {
      const std::size_t row = patches + 1 + j;
      std::vector<double> map(patches);
      for (std::size_t p = 0; p < patches; ++p)
        map[p] = static_cast<double>(v[(j * s + row) * s + 1 + p]);
      const auto pgm_path =
          out_dir / ("layer" + std::to_string(l) + "_head" + std::to_string(j) + ".pgm");
      write_pgm(pgm_path, to_pgm(map, cfg.grid_width(), cfg.grid_height()));
      written.push_back(pgm_path);
    }
  }
  return written;
}

template std::vector<std::filesystem::path> export_attention(Model<float>&, const Tensor<float>&,
                                                             const std::vector<std::size_t>&,
                                                             const std::filesystem::path&);
template std::vector<std::filesystem::path> export_attention(Model<double>&,
                                                             const Tensor<double>&,
                                                             const std::vector<std::size_t>&,
                                                             const std::filesystem::path&);

}  // namespace dhvt
