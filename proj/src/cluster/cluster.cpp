#include "lesiongen/cluster/cluster.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "lesiongen/error.hpp"

namespace lesiongen {

namespace {

Tensor replicate_mask(const Tensor& mask) {
  Tensor out({mask.dim(0), 3, mask.dim(2), mask.dim(3)});
  const std::size_t hw = static_cast<std::size_t>(mask.dim(2)) * mask.dim(3);
  for (int b = 0; b < mask.dim(0); ++b) {
    for (int c = 0; c < 3; ++c) {
      std::copy_n(mask.data().data() + static_cast<std::size_t>(b) * hw, hw,
                  out.data().data() + (static_cast<std::size_t>(b) * 3 + c) * hw);
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> embed_pair(const Tensor& image, const Tensor& mask, const FeatureExtractor& extractor) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3 || mask.rank() != 4 || mask.dim(0) != 1 ||
      mask.dim(1) != 1 || image.dim(2) != mask.dim(2) || image.dim(3) != mask.dim(3)) {
    throw ShapeError("embed_pair: expects image [1,3,H,W] and mask [1,1,H,W], got " + shape_string(image.dims()) + " and " +
                     shape_string(mask.dims()));
  }
  const Tensor ti = extractor.tokens(image);
  const Tensor tm = extractor.tokens(replicate_mask(mask));
  std::vector<double> out(ti.data().begin(), ti.data().end());
  out.insert(out.end(), tm.data().begin(), tm.data().end());
  return out;
}

Eigen::MatrixXd embed_samples(const Tensor& samples, const FeatureExtractor& extractor, bool normalize) {
  if (samples.rank() != 4 || samples.dim(1) != 4) throw ShapeError("embed_samples: expects [N,4,H,W], got " + shape_string(samples.dims()));
  const int n = samples.dim(0);
  const int d = extractor.token_dim();
  Eigen::MatrixXd out(n, 2 * d);
  // Batched, 16 at a time; the extractor is per-sample so this matches embed_pair.
  for (int begin = 0; begin < n; begin += 16) {
    const int end = std::min(n, begin + 16);
    const Tensor part = [&] {
      Shape dims = samples.dims();
      dims[0] = end - begin;
      const std::size_t per = samples.size() / static_cast<std::size_t>(n);
      return Tensor(dims, std::vector<float>(samples.data().begin() + static_cast<std::ptrdiff_t>(per * begin),
                                             samples.data().begin() + static_cast<std::ptrdiff_t>(per * end)));
    }();
    const Tensor ti = extractor.tokens(channel_slice(part, 0, 3));
    const Tensor tm = extractor.tokens(replicate_mask(channel_slice(part, 3, 4)));
    for (int r = 0; r < end - begin; ++r) {
      for (int j = 0; j < d; ++j) {
        out(begin + r, j) = ti[static_cast<std::size_t>(r) * d + j];
        out(begin + r, d + j) = tm[static_cast<std::size_t>(r) * d + j];
      }
    }
  }
  if (normalize) {
    for (int r = 0; r < n; ++r) {
      const double nr = out.row(r).norm();
      if (nr > 0) out.row(r) /= nr;
    }
  }
  return out;
}

KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int max_iter) {
  const int n = static_cast<int>(x.rows());
  if (k < 1) throw ValidationError("kmeans: K must be >= 1");
  if (k > n) throw ValidationError("kmeans: K=" + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
  if (max_iter < 1) throw ValidationError("kmeans: max_iter must be >= 1");
  if (!x.allFinite()) throw NumericError("kmeans: non-finite embedding");

  // k-means++ seeding. Index picks use u * mass scans so that repeating every
  // point in place leaves the choices unchanged.
  Rng rng(derive_seed(seed, "kmeans"));
  Eigen::MatrixXd c(k, x.cols());
  c.row(0) = x.row(std::min(n - 1, static_cast<int>(rng.uniform() * n)));
  Eigen::VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    int pick = n - 1;
    if (total > 0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += d2(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min(n - 1, static_cast<int>(rng.uniform() * n));
    }
    c.row(j) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
  }

  KMeansResult res;
  res.assignment.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    std::vector<int> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (x.row(i) - c.row(j)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = j;
        }
      }
      next[static_cast<std::size_t>(i)] = best;
    }
    // Empty-cluster repair.
    for (int j = 0; j < k; ++j) {
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (int a : next) ++counts[static_cast<std::size_t>(a)];
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      int far = -1;
      double fd = -1.0;
      for (int i = 0; i < n; ++i) {
        const int a = next[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(a)] < 2) continue;
        const double d = (x.row(i) - c.row(a)).squaredNorm();
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      next[static_cast<std::size_t>(far)] = j;
      c.row(j) = x.row(far);
      ++res.repairs;
    }
    const bool changed = next != res.assignment;
    res.assignment = std::move(next);
    // Update step.
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sum.row(res.assignment[static_cast<std::size_t>(i)]) += x.row(i);
      ++counts[static_cast<std::size_t>(res.assignment[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j) c.row(j) = sum.row(j) / counts[static_cast<std::size_t>(j)];
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) inertia += (x.row(i) - c.row(res.assignment[static_cast<std::size_t>(i)])).squaredNorm();
    res.inertia.push_back(inertia);
    res.iterations = it + 1;
    if (!changed) break;
  }
  res.centroids = std::move(c);
  return res;
}

std::vector<int> ClusterRegistry::missing() const {
  std::vector<int> out;
  for (int j = 0; j < k; ++j) {
    if (!checkpoints.count(j)) out.push_back(j);
  }
  return out;
}

std::vector<std::string> ClusterRegistry::members(int cluster) const {
  std::vector<std::string> out;
  for (const auto& [id, c] : assignment) {
    if (c == cluster) out.push_back(id);
  }
  return out;
}

ClusterRegistry build_registry(const std::vector<std::string>& ids, const KMeansResult& clusters,
                               std::map<int, std::filesystem::path> checkpoints,
                               std::optional<std::filesystem::path> full_checkpoint) {
  if (ids.size() != clusters.assignment.size()) throw ValidationError("build_registry: one id per assigned sample required");
  ClusterRegistry r;
  r.k = static_cast<int>(clusters.centroids.rows());
  r.centroids = clusters.centroids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!r.assignment.emplace(ids[i], clusters.assignment[i]).second) throw ValidationError("build_registry: duplicate id '" + ids[i] + "'");
  }
  std::vector<int> counts(static_cast<std::size_t>(r.k), 0);
  for (int a : clusters.assignment) {
    if (a < 0 || a >= r.k) throw ValidationError("build_registry: cluster id out of range");
    ++counts[static_cast<std::size_t>(a)];
  }
  for (int j = 0; j < r.k; ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0) throw ValidationError("build_registry: cluster " + std::to_string(j) + " is empty");
  }
  for (const auto& [j, p] : checkpoints) {
    if (j < 0 || j >= r.k) throw ValidationError("build_registry: checkpoint for unknown cluster " + std::to_string(j));
  }
  r.checkpoints = std::move(checkpoints);
  r.full_checkpoint = std::move(full_checkpoint);
  return r;
}

void save_registry(const std::filesystem::path& path, const ClusterRegistry& r) {
  std::ostringstream os;
  os << "LESIONGEN-REGISTRY 1\n";
  os << "k " << r.k << "\n";
  os << "dim " << r.centroids.cols() << "\n";
  for (int j = 0; j < r.centroids.rows(); ++j) {
    os << "centroid " << j;
    for (int d = 0; d < r.centroids.cols(); ++d) os << ' ' << format_double(r.centroids(j, d));
    os << "\n";
  }
  for (const auto& [j, p] : r.checkpoints) os << "checkpoint " << j << ' ' << p.string() << "\n";
  if (r.full_checkpoint) os << "full " << r.full_checkpoint->string() << "\n";
  for (const auto& [id, c] : r.assignment) os << "sample " << id << ' ' << c << "\n";
  os << "end\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write registry " + path.string());
  f << os.str();
  if (!f) throw IoError("failed writing registry " + path.string());
}

ClusterRegistry load_registry(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read registry " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "LESIONGEN-REGISTRY 1") throw IoError(path.string() + ": not a registry file");
  ClusterRegistry r;
  long dim = 0;
  bool ended = false;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    auto bad = [&] { return IoError(path.string() + ":" + std::to_string(lineno) + ": malformed '" + tag + "' line"); };
    if (tag == "k") {
      if (!(is >> r.k) || r.k < 0) throw bad();
    } else if (tag == "dim") {
      if (!(is >> dim) || dim < 0) throw bad();
      r.centroids = Eigen::MatrixXd::Zero(r.k, dim);
    } else if (tag == "centroid") {
      int j = -1;
      if (!(is >> j) || j < 0 || j >= r.centroids.rows()) throw bad();
      for (long d = 0; d < dim; ++d) {
        if (!(is >> r.centroids(j, d))) throw bad();
      }
    } else if (tag == "checkpoint") {
      int j = -1;
      std::string p;
      if (!(is >> j) || !std::getline(is >> std::ws, p) || j < 0 || j >= r.k) throw bad();
      r.checkpoints[j] = p;
    } else if (tag == "full") {
      std::string p;
      if (!std::getline(is >> std::ws, p)) throw bad();
      r.full_checkpoint = p;
    } else if (tag == "sample") {
      std::string id;
      int c = -1;
      if (!(is >> id >> c) || c < 0 || c >= r.k) throw bad();
      r.assignment[id] = c;
    } else if (tag == "end") {
      ended = true;
      break;
    } else {
      throw bad();
    }
  }
  if (!ended) throw IoError(path.string() + ": truncated registry");
  return r;
}

void write_membership_csv(const std::filesystem::path& path, const ClusterRegistry& r) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "sample_id,cluster\n";
  for (const auto& [id, c] : r.assignment) f << id << ',' << c << "\n";
}

int pick_model(const ClusterRegistry& registry, Rng& rng) {
  if (registry.k < 1) throw ValidationError("pick_model: registry has no clusters");
  const auto miss = registry.missing();
  if (!miss.empty()) throw ValidationError("pick_model: cluster " + std::to_string(miss.front()) + " has no checkpoint");
  return rng.uniform_int(0, registry.k - 1);
}

}  // namespace lesiongen
