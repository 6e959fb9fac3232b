#pragma once

#include <string>
#include <vector>

#include "dgmix/data.hpp"
#include "dgmix/model.hpp"
#include "dgmix/report.hpp"
#include "dgmix/trainer.hpp"

namespace dgmix {

/// Fraction of samples predicted correctly under deterministic-blend
/// inference.
template <typename S = double>
double accuracy(const ModelParamsT<S>& params, const ModelConfig& cfg,
                const RotatedDomainSet& dataset, double alpha, std::size_t chunk = 250) {
  if (dataset.count() == 0) throw ValidationError("accuracy: dataset is empty");
  const TensorT<S> images = dataset.images.template cast<S>();
  const PredictionT<S> pred = predict(images, params, cfg, alpha, chunk);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.count(); ++i) {
    if (pred.labels[i] == dataset.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.count());
}

/// Count, per rotation group, how often the branch's argmax points at each
/// source domain; rows normalized by their sample count. Domain argmax ties
/// break toward the lowest domain. Empty groups are dropped with a warning
/// record.
template <typename S = double>
AssignmentMatrix assignment_matrix(const ModelParamsT<S>& params, const ModelConfig& cfg,
                                   const std::vector<RotatedDomainSet>& groups, double alpha,
                                   std::size_t chunk = 250) {
  AssignmentMatrix m;
  m.source_domains.resize(cfg.domains);
  for (std::size_t j = 0; j < cfg.domains; ++j) m.source_domains[j] = static_cast<int>(j) + 1;

  std::vector<std::vector<double>> rows;
  for (const RotatedDomainSet& group : groups) {
    if (group.count() == 0) {
      m.warnings.push_back("group at angle " + format_double(group.angle) +
                           " is empty; row dropped");
      continue;
    }
    const TensorT<S> images = group.images.template cast<S>();
    const PredictionT<S> pred = predict(images, params, cfg, alpha, chunk);
    std::vector<std::size_t> counts(cfg.domains, 0);
    for (std::size_t i = 0; i < group.count(); ++i) {
      const S* wrow = pred.w.ptr() + i * cfg.domains;
      std::size_t best = 0;
      for (std::size_t j = 1; j < cfg.domains; ++j) {
        if (wrow[j] > wrow[best]) best = j;
      }
      ++counts[best];
    }
    std::vector<double> freq(cfg.domains);
    for (std::size_t j = 0; j < cfg.domains; ++j) {
      freq[j] = static_cast<double>(counts[j]) / static_cast<double>(group.count());
    }
    m.row_angles.push_back(group.angle);
    m.row_counts.push_back(group.count());
    rows.push_back(std::move(freq));
  }

  if (!rows.empty()) {
    m.values = Tensor({rows.size(), cfg.domains});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < cfg.domains; ++j) m.values[r * cfg.domains + j] = rows[r][j];
    }
  }
  return m;
}

/// One trained model per alpha, identical seeds throughout, each evaluated on
/// the held-out target with the same alpha it trained with.
struct SweepRow {
  double alpha = 0;
  ResultTable table;
};

template <typename S = double>
std::vector<SweepRow> alpha_sweep(const TrainConfig& base, const ModelConfig& cfg,
                                  const Episode& episode, const std::vector<double>& alphas) {
  std::vector<SweepRow> rows;
  for (double alpha : alphas) {
    TrainConfig tc = base;
    tc.alpha = alpha;
    tc.validate();
    const TrainResultT<S> result = train<S>(tc, cfg, episode);
    SweepRow row;
    row.alpha = alpha;
    row.table.angles.push_back(episode.target.angle);
    row.table.accuracies.push_back(accuracy(result.params, cfg, episode.target, alpha));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Sweep table as CSV: one line per (alpha, target angle) pair.
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& path);

}  // namespace dgmix
