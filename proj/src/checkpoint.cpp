#include "fedirm/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

namespace fedirm {

namespace {

constexpr char kMagic[4] = {'F', 'I', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF),
                         static_cast<char>((v >> 24) & 0xFF)};
  os.write(bytes, 4);
}

void put_f32(std::ostream& os, double v) {
  put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4))
    throw FormatError(std::string("checkpoint truncated reading ") + what);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

double get_f32(std::istream& is, const char* what) {
  const float f = std::bit_cast<float>(get_u32(is, what));
  if (!std::isfinite(f))
    throw FormatError(std::string("checkpoint holds non-finite value in ") + what);
  return static_cast<double>(f);
}

}  // namespace

void save_checkpoint(const ParameterSet& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);

  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(params.layer_count()));
  for (const auto& shape : params.shape_signature()) {
    put_u32(os, static_cast<std::uint32_t>(shape.out));
    put_u32(os, static_cast<std::uint32_t>(shape.in));
  }
  for (const auto& layer : params.layers()) {
    for (double v : layer.weight.data()) put_f32(os, v);
    for (double b : layer.bias) put_f32(os, b);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  if (!is.read(magic, 4)) throw FormatError("checkpoint truncated reading magic");
  for (int i = 0; i < 4; ++i)
    if (magic[i] != kMagic[i]) throw FormatError("expected checkpoint magic FIRM");

  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t layer_count = get_u32(is, "layer count");
  if (layer_count == 0) throw FormatError("checkpoint has zero layers");

  std::vector<LayerShape> shapes(layer_count);
  for (auto& s : shapes) {
    s.out = get_u32(is, "layer shape");
    s.in = get_u32(is, "layer shape");
    if (s.out == 0 || s.in == 0) throw FormatError("checkpoint has zero-sized layer");
  }

  std::vector<Layer> layers;
  layers.reserve(layer_count);
  for (const auto& s : shapes) {
    Layer l{Matrix(s.out, s.in), std::vector<double>(s.out)};
    for (double& v : l.weight.data()) v = get_f32(is, "weights");
    for (double& b : l.bias) b = get_f32(is, "biases");
    layers.push_back(std::move(l));
  }

  char extra;
  if (is.read(&extra, 1)) throw FormatError("checkpoint has trailing bytes");
  return ParameterSet(std::move(layers));
}

}  // namespace fedirm
