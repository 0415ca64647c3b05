#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedirm/matrix.hpp"

namespace fedirm {

/// A fully labeled source dataset, before federation.
struct Dataset {
  Matrix features;          // N x d
  std::vector<int> labels;  // N entries in [0, class_count)
  std::size_t class_count = 0;
  std::size_t image_height = 0;  // both zero for plain vector data
  std::size_t image_width = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

/// Gaussian clusters, class balanced, means on the unit simplex scaled by a
/// fixed factor, shuffled deterministically by seed.
Dataset generate_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                       double spread, std::uint64_t seed);

/// IDX image/label pair (big-endian magic 0x00000803 / 0x00000801). Pixels are
/// scaled to [0,1]; optional per-feature standardization on top.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 bool standardize = false);

/// Header "f0,...,f{d-1},label", one row per sample.
void export_csv(const Dataset& dataset, const std::string& path);

enum class ClientKind { Labeled, Unlabeled };

/// One client's local shard. Unlabeled shards never expose their targets to
/// training code; the ground truth is retained separately for evaluation-only
/// tooling and has no influence on any computation.
class ClientDataset {
 public:
  ClientDataset(int client_id, ClientKind kind, Matrix features,
                std::vector<int> targets, std::vector<int> hidden_targets);

  int client_id() const { return client_id_; }
  ClientKind kind() const { return kind_; }
  const Matrix& features() const { return features_; }
  std::size_t size() const { return features_.rows(); }

  /// Ground-truth targets of a labeled client. Throws InvalidInput on an
  /// unlabeled client; this is the only label access path training code has.
  const std::vector<int>& targets() const;

  const std::vector<int>& hidden_targets_for_eval() const { return hidden_targets_; }

 private:
  int client_id_;
  ClientKind kind_;
  Matrix features_;
  std::vector<int> targets_;
  std::vector<int> hidden_targets_;
};

struct FederationSplit {
  std::vector<ClientDataset> labeled;
  std::vector<ClientDataset> unlabeled;
  Matrix val_features;
  std::vector<int> val_labels;
  Matrix test_features;
  std::vector<int> test_labels;
  std::size_t class_count = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

/// 70/10/20 train/val/test split, then the train portion is shuffled by seed
/// and dealt into `client_count` near-equal shards (sizes differ by at most
/// one). The first `labeled_count` shards keep their targets.
FederationSplit partition(const Dataset& dataset, std::size_t client_count,
                          std::size_t labeled_count, std::uint64_t seed);

/// What an input perturbation looks like. Vector data gets additive Gaussian
/// noise; image data (declared H x W) gets one of 90-degree rotation, integer
/// translation of at most 2 px, or horizontal flip, chosen by seed.
struct PerturbSpec {
  double sigma = 0.1;
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  bool is_image() const { return image_height > 0 && image_width > 0; }
  bool operator==(const PerturbSpec&) const = default;
};

std::vector<double> perturb(const std::vector<double>& features, const PerturbSpec& spec,
                            std::uint64_t seed);

/// Row i of the result is perturb(row i, spec, mix_seed(seed, i)).
Matrix perturb_batch(const Matrix& batch, const PerturbSpec& spec, std::uint64_t seed);

}  // namespace fedirm
