#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "fedirm/data.hpp"
#include "fedirm/numerics.hpp"

namespace fedirm {

enum class RelationProvenance { LabeledClient, UnlabeledBatch, ServerAggregate };

/// C x C matrix whose row c is the temperature-softened average model response
/// for class c. Rows for classes with no observations are flagged invalid
/// instead of being fabricated; every valid row is a strictly positive
/// probability vector.
class RelationMatrix {
 public:
  RelationMatrix(Matrix entries, std::vector<std::uint8_t> row_valid,
                 RelationProvenance provenance, int client_id = -1);

  std::size_t class_count() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  bool row_valid(std::size_t c) const { return row_valid_[c] != 0; }
  const std::vector<std::uint8_t>& validity() const { return row_valid_; }
  std::size_t valid_row_count() const;
  RelationProvenance provenance() const { return provenance_; }
  int client_id() const { return client_id_; }

 private:
  Matrix entries_;
  std::vector<std::uint8_t> row_valid_;
  RelationProvenance provenance_;
  int client_id_;
};

/// Per-class mean of the pre-softmax outputs over a labeled client's dataset
/// (computed in eval mode), each row softened by temperature tau. Classes the
/// client never observed come back as invalid rows.
RelationMatrix labeled_relation(const Network& net, const ClientDataset& dataset,
                                double tau);

struct UncertaintyReport {
  Matrix mean_probs;            // B x C, mean softmax over the stochastic passes
  std::vector<double> entropy;  // B entries in [0, ln C]
  int pass_count = 0;
  double threshold = 0.0;
  std::vector<std::uint8_t> keep;  // entropy strictly below threshold

  std::size_t kept_count() const;
};

/// T stochastic forward passes under dropout (pass t uses a seed derived from
/// (seed, t)); predictive entropy of the averaged probabilities; keep mask is
/// entropy < threshold. Requires T >= 2.
UncertaintyReport mc_dropout_uncertainty(const Network& net, const Matrix& batch,
                                         int passes, double threshold,
                                         std::uint64_t seed);

/// Relation matrix from a batch of predicted values: pseudo label is the row
/// argmax (ties to the lowest class), rows average the kept samples per pseudo
/// class, then soften by tau. Rows with no kept samples are invalid.
RelationMatrix unlabeled_relation(const Matrix& probs, const UncertaintyReport& report,
                                  double tau);

/// Symmetric KL between rows valid in both matrices, averaged over the count
/// of such rows; zero when none overlap. Log arguments are floored at 1e-8.
double irm_loss(const RelationMatrix& server, const RelationMatrix& local);

/// Entry-wise mean over the labeled clients' matrices. A row is valid in the
/// aggregate iff valid in at least one input; aggregated rows are renormalized
/// to sum to one.
RelationMatrix aggregate_relations(const std::vector<RelationMatrix>& matrices);

/// One row per class: C entries to six decimals, then a validity flag.
void write_relation_csv(std::ostream& os, const Matrix& entries,
                        const std::vector<std::uint8_t>& validity,
                        const std::string& matrix_name, bool header);

inline void write_relation_csv(std::ostream& os, const RelationMatrix& m,
                               const std::string& matrix_name, bool header) {
  write_relation_csv(os, m.entries(), m.validity(), matrix_name, header);
}

}  // namespace fedirm
