#include "lesiongen/io/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "lesiongen/error.hpp"

namespace lesiongen {

namespace {

int read_header_int(std::istream& is, const std::string& where) {
  int c = is.peek();
  while (is && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else {
      is.get();
    }
    c = is.peek();
  }
  int v = -1;
  if (!(is >> v) || v < 0) throw IoError(where + ": malformed Netpbm header");
  return v;
}

}  // namespace

Image8 read_netpbm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  is.read(magic, 2);
  if (!is || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) throw IoError(path.string() + ": not a binary PGM/PPM file");
  Image8 img;
  img.channels = magic[1] == '6' ? 3 : 1;
  img.width = read_header_int(is, path.string());
  img.height = read_header_int(is, path.string());
  const int maxval = read_header_int(is, path.string());
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit (maxval 255) images are supported");
  if (img.width < 1 || img.height < 1) throw IoError(path.string() + ": empty image");
  is.get();  // single whitespace before the raster
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw IoError(path.string() + ": truncated raster");
  return img;
}

void write_netpbm(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ValidationError("write_netpbm: 1 or 3 channels required");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) throw ValidationError("write_netpbm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor to_planes(const Image8& img) {
  Tensor t({img.channels, img.height, img.width});
  const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < hw; ++i) {
    for (int c = 0; c < img.channels; ++c) t[c * hw + i] = img.pixels[i * static_cast<std::size_t>(img.channels) + static_cast<std::size_t>(c)];
  }
  return t;
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
  return 0.0;
}

struct Taps {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

Taps taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double stretch = std::max(scale, 1.0);
  const double support = 2.0 * stretch;
  Taps t;
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = static_cast<int>(std::floor(center - support));
    const int hi = static_cast<int>(std::ceil(center + support));
    std::vector<double> w;
    double sum = 0.0;
    for (int k = lo; k <= hi; ++k) {
      const double v = cubic((k + 0.5 - center) / stretch);
      w.push_back(v);
      sum += v;
    }
    for (double& v : w) v /= sum;
    t.first.push_back(lo);
    t.weights.push_back(std::move(w));
  }
  return t;
}

}  // namespace

Tensor resize_bicubic(const Tensor& planes, int out_h, int out_w) {
  if (planes.rank() != 3) throw ShapeError("resize_bicubic: expects [C,H,W], got " + shape_string(planes.dims()));
  if (out_h < 1 || out_w < 1) throw ValidationError("resize_bicubic: output size must be positive");
  const int c = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
  if (h == out_h && w == out_w) return planes;
  const Taps tx = taps(w, out_w), ty = taps(h, out_h);
  Tensor rows({c, h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double s = 0.0;
        const auto& wt = tx.weights[static_cast<std::size_t>(x)];
        for (std::size_t k = 0; k < wt.size(); ++k) {
          const int sx = std::clamp(tx.first[static_cast<std::size_t>(x)] + static_cast<int>(k), 0, w - 1);
          s += wt[k] * planes[(static_cast<std::size_t>(ch) * h + y) * w + sx];
        }
        rows[(static_cast<std::size_t>(ch) * h + y) * out_w + x] = static_cast<float>(s);
      }
    }
  }
  Tensor out({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < out_h; ++y) {
      const auto& wt = ty.weights[static_cast<std::size_t>(y)];
      for (int x = 0; x < out_w; ++x) {
        double s = 0.0;
        for (std::size_t k = 0; k < wt.size(); ++k) {
          const int sy = std::clamp(ty.first[static_cast<std::size_t>(y)] + static_cast<int>(k), 0, h - 1);
          s += wt[k] * rows[(static_cast<std::size_t>(ch) * h + sy) * out_w + x];
        }
        out[(static_cast<std::size_t>(ch) * out_h + y) * out_w + x] = static_cast<float>(s);
      }
    }
  }
  return out;
}

}  // namespace lesiongen
