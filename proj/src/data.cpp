#include "fedirm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fedirm/rng.hpp"

namespace fedirm {

namespace {

// Class means sit on the vertices of a scaled simplex when the feature space
// is wide enough; otherwise on seeded random unit directions. Vertex radii are
// graded so class pairs differ in separation, giving the classes a non-trivial
// similarity structure instead of an all-pairs-equidistant one.
constexpr double kSimplexScale = 1.0;

double vertex_radius(std::size_t c, std::size_t classes) {
  const double t = classes > 1 ? static_cast<double>(c) / static_cast<double>(classes - 1)
                               : 0.0;
  return kSimplexScale * (0.75 + 0.5 * t);
}

std::vector<std::vector<double>> class_means(std::size_t classes, std::size_t dim,
                                             std::uint64_t seed) {
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim, 0.0));
  if (dim >= classes) {
    for (std::size_t c = 0; c < classes; ++c) means[c][c] = vertex_radius(c, classes);
  } else {
    Rng rng(mix_seed(seed, 0x3EA2));
    for (std::size_t c = 0; c < classes; ++c) {
      auto& mean = means[c];
      double norm = 0.0;
      for (double& v : mean) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : mean) v = vertex_radius(c, classes) * v / norm;
    }
  }
  return means;
}

}  // namespace

Dataset generate_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                       double spread, std::uint64_t seed) {
  if (classes < 2) throw InvalidInput("generate_blobs: need at least 2 classes");
  if (per_class < 1) throw InvalidInput("generate_blobs: need at least 1 sample per class");
  if (dim < 2) throw InvalidInput("generate_blobs: need dimension >= 2");
  if (spread <= 0.0) throw InvalidInput("generate_blobs: spread must be positive");

  const auto means = class_means(classes, dim, seed);
  const std::size_t total = classes * per_class;

  Matrix raw(total, dim);
  std::vector<int> raw_labels(total);
  Rng sample_rng(mix_seed(seed, 0xB10B));
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      double* x = raw.row(row);
      for (std::size_t k = 0; k < dim; ++k)
        x[k] = means[c][k] + spread * sample_rng.normal();
      raw_labels[row] = static_cast<int>(c);
    }
  }

  Rng shuffle_rng(mix_seed(seed, 0x5F1E));
  const auto order = shuffle_rng.permutation(total);

  Dataset out;
  out.features = Matrix(total, dim);
  out.labels.resize(total);
  out.class_count = classes;
  for (std::size_t i = 0; i < total; ++i) {
    const double* src = raw.row(order[i]);
    std::copy(src, src + dim, out.features.row(i));
    out.labels[i] = raw_labels[order[i]];
  }
  return out;
}

namespace {

std::uint32_t read_be_u32(std::istream& is, const std::string& file, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(file + ": truncated reading " + what);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool standardize) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open images file: " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open labels file: " + labels_path);

  if (read_be_u32(img, images_path, "magic") != 0x00000803u)
    throw FormatError(images_path + ": expected image magic 0x00000803");
  if (read_be_u32(lab, labels_path, "magic") != 0x00000801u)
    throw FormatError(labels_path + ": expected label magic 0x00000801");

  const std::uint32_t image_count = read_be_u32(img, images_path, "count");
  const std::uint32_t rows = read_be_u32(img, images_path, "rows");
  const std::uint32_t cols = read_be_u32(img, images_path, "cols");
  const std::uint32_t label_count = read_be_u32(lab, labels_path, "count");
  if (image_count != label_count)
    throw FormatError("image/label count mismatch: " + std::to_string(image_count) +
                      " images vs " + std::to_string(label_count) + " labels");
  if (image_count == 0) throw FormatError(images_path + ": empty dataset");

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  Dataset out;
  out.features = Matrix(image_count, dim);
  out.labels.resize(image_count);
  out.image_height = rows;
  out.image_width = cols;

  std::vector<unsigned char> pixel_row(dim);
  int max_label = 0;
  for (std::uint32_t i = 0; i < image_count; ++i) {
    if (!img.read(reinterpret_cast<char*>(pixel_row.data()), pixel_row.size()))
      throw FormatError(images_path + ": truncated reading pixels");
    double* dst = out.features.row(i);
    for (std::size_t k = 0; k < dim; ++k) dst[k] = pixel_row[k] / 255.0;

    unsigned char label;
    if (!lab.read(reinterpret_cast<char*>(&label), 1))
      throw FormatError(labels_path + ": truncated reading labels");
    out.labels[i] = label;
    max_label = std::max(max_label, static_cast<int>(label));
  }
  out.class_count = static_cast<std::size_t>(max_label) + 1;

  if (standardize) {
    for (std::size_t k = 0; k < dim; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) mean += out.features.at(i, k);
      mean /= static_cast<double>(out.size());
      double var = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = out.features.at(i, k) - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(out.size()));
      const double denom = sd > 1e-8 ? sd : 1.0;
      for (std::size_t i = 0; i < out.size(); ++i)
        out.features.at(i, k) = (out.features.at(i, k) - mean) / denom;
    }
  }
  return out;
}

void export_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open csv for writing: " + path);
  for (std::size_t k = 0; k < dataset.dim(); ++k) os << 'f' << k << ',';
  os << "label\n";
  char buf[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (std::size_t k = 0; k < dataset.dim(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.9g", dataset.features.at(i, k));
      os << buf << ',';
    }
    os << dataset.labels[i] << '\n';
  }
  if (!os) throw IoError("failed writing csv: " + path);
}

ClientDataset::ClientDataset(int client_id, ClientKind kind, Matrix features,
                             std::vector<int> targets, std::vector<int> hidden_targets)
    : client_id_(client_id),
      kind_(kind),
      features_(std::move(features)),
      targets_(std::move(targets)),
      hidden_targets_(std::move(hidden_targets)) {
  if (features_.rows() < 1) throw InvalidInput("ClientDataset: needs at least one sample");
  if (!features_.all_finite()) throw InvalidInput("ClientDataset: non-finite features");
  if (kind_ == ClientKind::Labeled) {
    if (targets_.size() != features_.rows())
      throw InvalidInput("ClientDataset: labeled client must carry one target per sample");
  } else if (!targets_.empty()) {
    throw InvalidInput("ClientDataset: unlabeled client cannot expose targets");
  }
}

const std::vector<int>& ClientDataset::targets() const {
  if (kind_ != ClientKind::Labeled)
    throw InvalidInput("targets(): client " + std::to_string(client_id_) +
                       " is unlabeled and exposes no targets");
  return targets_;
}

FederationSplit partition(const Dataset& dataset, std::size_t client_count,
                          std::size_t labeled_count, std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (client_count < 1 || labeled_count < 1 || labeled_count > client_count)
    throw InvalidInput("partition: need 1 <= labeled_count <= client_count");
  if (n < 10) throw InvalidInput("partition: dataset too small for a 70/10/20 split");

  const std::size_t train_n = (n * 70) / 100;
  const std::size_t val_n = (n * 10) / 100;
  const std::size_t test_n = n - train_n - val_n;
  if (client_count > train_n)
    throw InvalidInput("partition: client count exceeds training samples");

  Rng rng(mix_seed(seed, 0x5A17));
  const auto order = rng.permutation(n);

  auto slice = [&](std::size_t begin, std::size_t count, Matrix& feats,
                   std::vector<int>& labels) {
    feats = Matrix(count, dataset.dim());
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double* src = dataset.features.row(order[begin + i]);
      std::copy(src, src + dataset.dim(), feats.row(i));
      labels[i] = dataset.labels[order[begin + i]];
    }
  };

  FederationSplit split;
  split.class_count = dataset.class_count;
  split.image_height = dataset.image_height;
  split.image_width = dataset.image_width;
  slice(train_n, val_n, split.val_features, split.val_labels);
  slice(train_n + val_n, test_n, split.test_features, split.test_labels);

  const std::size_t base = train_n / client_count;
  const std::size_t extra = train_n % client_count;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < client_count; ++k) {
    const std::size_t shard = base + (k < extra ? 1 : 0);
    Matrix feats;
    std::vector<int> labels;
    slice(cursor, shard, feats, labels);
    cursor += shard;

    if (k < labeled_count) {
      split.labeled.emplace_back(static_cast<int>(k), ClientKind::Labeled,
                                 std::move(feats), labels, labels);
    } else {
      split.unlabeled.emplace_back(static_cast<int>(k), ClientKind::Unlabeled,
                                   std::move(feats), std::vector<int>{}, labels);
    }
  }
  return split;
}

namespace {

std::vector<double> perturb_image(const std::vector<double>& x, std::size_t h,
                                  std::size_t w, Rng& rng) {
  std::vector<double> out(x.size(), 0.0);
  auto src = [&](std::size_t r, std::size_t c) { return x[r * w + c]; };

  switch (rng.uniform_index(3)) {
    case 0: {  // rotation by a multiple of 90 degrees
      std::size_t quarter_turns = 1 + rng.uniform_index(3);
      if (h != w && quarter_turns != 2) quarter_turns = 2;  // keep the shape
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          std::size_t rr, cc;
          if (quarter_turns == 1) {
            rr = c;
            cc = h - 1 - r;
          } else if (quarter_turns == 2) {
            rr = h - 1 - r;
            cc = w - 1 - c;
          } else {
            rr = w - 1 - c;
            cc = r;
          }
          out[rr * w + cc] = src(r, c);
        }
      break;
    }
    case 1: {  // integer translation, zero fill
      const long dr = static_cast<long>(rng.uniform_index(5)) - 2;
      const long dc = static_cast<long>(rng.uniform_index(5)) - 2;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const long rr = static_cast<long>(r) + dr;
          const long cc = static_cast<long>(c) + dc;
          if (rr >= 0 && rr < static_cast<long>(h) && cc >= 0 && cc < static_cast<long>(w))
            out[rr * w + cc] = src(r, c);
        }
      break;
    }
    default: {  // horizontal flip
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + (w - 1 - c)] = src(r, c);
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<double> perturb(const std::vector<double>& features, const PerturbSpec& spec,
                            std::uint64_t seed) {
  for (double v : features)
    if (!std::isfinite(v)) throw InvalidInput("perturb: non-finite features");

  if (spec.is_image()) {
    if (features.size() != spec.image_height * spec.image_width)
      throw InvalidInput("perturb: feature length does not match declared image shape");
    Rng rng(mix_seed(seed, 0x1CE5));
    return perturb_image(features, spec.image_height, spec.image_width, rng);
  }

  if (spec.sigma == 0.0) return features;
  std::vector<double> out(features.size());
  Rng rng(mix_seed(seed, 0x6055));
  for (std::size_t k = 0; k < features.size(); ++k)
    out[k] = features[k] + spec.sigma * rng.normal();
  return out;
}

Matrix perturb_batch(const Matrix& batch, const PerturbSpec& spec, std::uint64_t seed) {
  Matrix out(batch.rows(), batch.cols());
  std::vector<double> row(batch.cols());
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    std::copy(batch.row(i), batch.row(i) + batch.cols(), row.begin());
    const auto perturbed = perturb(row, spec, mix_seed(seed, i));
    std::copy(perturbed.begin(), perturbed.end(), out.row(i));
  }
  return out;
}

}  // namespace fedirm
