#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fits/trainer.hpp"

namespace fits::diagnostics {

struct AlignmentReport {
  double same_mean = 0.0, same_stddev = 0.0;
  double mismatched_mean = 0.0, mismatched_stddev = 0.0;
  int sample_count = 0;    // aligned pairs
  int common_width = 0;    // min(d_l, d_g); both sides truncated to it
};

// Pearson r of pooled text-entity rows vs their kg node rows, plus one
// random mismatched pairing per aligned pair.
AlignmentReport entity_alignment_correlation(
    encoder::ModelState& model,
    const std::vector<trainer::PreparedExample>& sample, std::uint64_t seed);

struct ModalityPca {
  // rows: (modality 'L' or 'G', x, y)
  struct Point {
    char modality;
    double x, y;
  };
  std::vector<Point> points;
  double centroid_gap = 0.0;  // in the truncated feature space
};

ModalityPca modality_pca(encoder::ModelState& model,
                         const std::vector<trainer::PreparedExample>& sample);

void write_pca_tsv(const ModalityPca& pca, const std::string& path);

struct AttentionReport {
  struct Entry {
    std::string surface;
    double weight;
  };
  // per candidate, last fusion layer, node -> interaction edge weights,
  // sorted descending; injected and interaction nodes excluded
  std::vector<std::vector<Entry>> per_candidate;
};

AttentionReport attention_report(encoder::ModelState& model,
                                 const trainer::PreparedExample& ex,
                                 const kg::KnowledgeGraph& kg);

double evaluate_accuracy(encoder::ModelState& model,
                         const std::vector<trainer::PreparedExample>& split);

}  // namespace fits::diagnostics
