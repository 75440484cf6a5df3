#include "lesiongen/io/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/error.hpp"
#include "lesiongen/hash.hpp"
#include "lesiongen/tensor/dtf.hpp"

namespace fs = std::filesystem;

namespace lesiongen {

namespace {

std::uint64_t hash_file(const fs::path& p, std::uint64_t h) {
  std::ifstream is(p, std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size(), h);
}

}  // namespace

std::uint8_t to_byte(float v) {
  const double q = std::nearbyint((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

Tensor sample_from_8bit(const Image8& image, const Image8& mask, int size) {
  if (image.channels != 3) throw ValidationError("expected an RGB image");
  if (mask.channels != 1) throw ValidationError("expected a grayscale mask");
  if (image.width != mask.width || image.height != mask.height) {
    throw ValidationError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + " but mask is " +
                          std::to_string(mask.width) + "x" + std::to_string(mask.height));
  }
  const Tensor img = resize_bicubic(to_planes(image), size, size);
  const Tensor msk = resize_bicubic(to_planes(mask), size, size);
  Tensor out({1, 4, size, size});
  const std::size_t hw = static_cast<std::size_t>(size) * size;
  for (std::size_t i = 0; i < 3 * hw; ++i) out[i] = static_cast<float>(std::clamp(static_cast<double>(img[i]), 0.0, 255.0) / 127.5 - 1.0);
  for (std::size_t i = 0; i < hw; ++i) out[3 * hw + i] = msk[i] > 127.f ? 1.f : -1.f;
  return out;
}

Dataset load_dataset(const fs::path& root, int size, bool prefer_sidecars) {
  if (size < 4) throw ValidationError("load_dataset: size must be >= 4");
  const fs::path images = root / "images", masks = root / "masks", tensors = root / "tensors";
  if (!fs::is_directory(images)) throw ValidationError(root.string() + ": missing images/ directory");
  if (!fs::is_directory(masks)) throw ValidationError(root.string() + ": missing masks/ directory");
  Dataset ds;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") ds.ids.push_back(e.path().stem().string());
  }
  std::sort(ds.ids.begin(), ds.ids.end());
  if (ds.ids.empty()) throw ValidationError(root.string() + ": no .ppm images found");
  bool sidecars = prefer_sidecars && fs::is_directory(tensors);
  for (const auto& id : ds.ids) sidecars = sidecars && fs::is_regular_file(tensors / (id + ".dtf"));
  std::vector<Tensor> parts;
  std::uint64_t h = kFnvOffset;
  for (const auto& id : ds.ids) {
    const fs::path mp = masks / (id + ".pgm");
    if (!fs::is_regular_file(mp)) throw ValidationError(id + ": missing mask " + mp.string());
    if (sidecars) {
      const fs::path tp = tensors / (id + ".dtf");
      Tensor t = load_dtf(tp);
      if (t.dims() != Shape{1, 4, size, size}) throw ValidationError(id + ": sidecar has dims " + shape_string(t.dims()));
      h = hash_file(tp, fnv1a64(id.data(), id.size(), h));
      parts.push_back(std::move(t));
      continue;
    }
    try {
      const fs::path ip = images / (id + ".ppm");
      parts.push_back(sample_from_8bit(read_netpbm(ip), read_netpbm(mp), size));
      h = hash_file(mp, hash_file(ip, fnv1a64(id.data(), id.size(), h)));
    } catch (const ValidationError& e) {
      throw ValidationError(id + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(id + ": " + e.what());
    }
  }
  ds.samples = batch_concat(parts);
  ds.hash = h;
  return ds;
}

std::vector<std::string> save_sample(const Tensor& sample, const fs::path& root, const std::string& id) {
  if (sample.rank() != 4 || sample.dim(0) != 1 || sample.dim(1) != 4) throw ShapeError("save_sample: expects [1,4,H,W], got " + shape_string(sample.dims()));
  if (id.empty() || id.find('/') != std::string::npos) throw ValidationError("save_sample: invalid id '" + id + "'");
  for (const char* sub : {"images", "masks", "tensors"}) fs::create_directories(root / sub);
  const int h = sample.dim(2), w = sample.dim(3);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Image8 img{w, h, 3, std::vector<std::uint8_t>(3 * hw)}, msk{w, h, 1, std::vector<std::uint8_t>(hw)};
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = to_byte(sample[c * hw + i]);
    msk.pixels[i] = sample[3 * hw + i] > 0.f ? 255 : 0;
  }
  const std::string ip = "images/" + id + ".ppm", mp = "masks/" + id + ".pgm", tp = "tensors/" + id + ".dtf";
  write_netpbm(root / ip, img);
  write_netpbm(root / mp, msk);
  save_dtf(root / tp, sample);
  return {ip, mp, tp};
}

std::vector<std::string> save_dataset(const Tensor& samples, const std::vector<std::string>& ids, const fs::path& root) {
  if (samples.rank() != 4 || samples.dim(0) != static_cast<int>(ids.size())) throw ValidationError("save_dataset: one id per sample required");
  std::vector<std::string> written;
  for (int i = 0; i < samples.dim(0); ++i) {
    const auto w = save_sample(batch_slice(samples, i, i + 1), root, ids[static_cast<std::size_t>(i)]);
    written.insert(written.end(), w.begin(), w.end());
  }
  return written;
}

}  // namespace lesiongen
