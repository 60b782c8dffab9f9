#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "voxid/corpus.hpp"
#include "voxid/similarity.hpp"

namespace voxid {

struct ProbeDataset {
  Eigen::MatrixXd x;  // N x D
  Eigen::VectorXd y;  // N
  std::vector<std::string> speakers;

  Eigen::Index rows() const { return x.rows(); }
  ProbeDataset subset(std::span<const Eigen::Index> rows) const;
};

struct LassoOptions {
  double tol = 1e-7;
  std::size_t max_sweeps = 10000;
};

struct LassoModel {
  /// Coefficients on standardized columns; zero for dropped columns.
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 0.0;
  Eigen::VectorXd column_mean;
  Eigen::VectorXd column_scale;  // population std; 0 marks a dropped column
  std::vector<double> objective_history;  // after each sweep
  std::size_t sweeps = 0;

  double predict_row(const Eigen::Ref<const Eigen::VectorXd>& row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

class ConvergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Minimizes (1/2N)||y - Zw - b||^2 + lambda ||w||_1 over standardized
/// columns Z by cyclic coordinate descent with soft-thresholding. Stops when
/// the largest coefficient change in a sweep drops below tol; throws
/// ConvergenceError when max_sweeps is exhausted.
LassoModel fit_lasso(const ProbeDataset& data, double lambda, const LassoOptions& opt = {},
                     const Eigen::VectorXd* warm_start = nullptr);

/// Smallest lambda that zeroes every coefficient: max_j |Z_j^T (y - mean y)| / N.
double lambda_max(const ProbeDataset& data);

/// `points` values log-spaced from ratio * lambda_max up to lambda_max, descending.
std::vector<double> lambda_grid(const ProbeDataset& data, std::size_t points = 30, double ratio = 1e-4);

double soft_threshold(double value, double lambda);

/// Indices whose value lies in [Q1 - 1.5 IQR, Q3 + 1.5 IQR]; quartiles by linear interpolation.
std::vector<std::size_t> iqr_filter(std::span<const double> values, double multiplier = 1.5);

/// Fold per sample. Speakers (largest utterance count first, then id) go to
/// the currently lightest fold, lowest index on ties.
std::vector<int> grouped_folds(std::span<const std::string> speakers, std::size_t k);

struct CvResult {
  double best_lambda = 0.0;
  std::vector<double> lambdas;   // descending
  std::vector<double> mean_mse;  // per lambda
  std::vector<int> folds;
  /// Out-of-fold predictions at best_lambda.
  Eigen::VectorXd held_out_predictions;
};

CvResult grouped_cv_select(const ProbeDataset& data, std::span<const double> lambdas, std::size_t k,
                           const LassoOptions& opt = {});

double r2(std::span<const double> y, std::span<const double> yhat);

/// Per-utterance feature values keyed by column name.
struct FeatureTable {
  std::vector<std::string> columns;
  struct Row {
    std::string id;
    std::string speaker;
    std::vector<std::optional<double>> values;
  };
  std::vector<Row> rows;
};

FeatureTable read_feature_table(const std::filesystem::path& path);
void write_feature_table(const std::filesystem::path& path, const FeatureTable& table);

enum class ProbeMode { refit_on_training, held_out };

struct ProbeOptions {
  std::size_t folds = 5;
  std::size_t grid_points = 30;
  double grid_ratio = 1e-4;
  double iqr_multiplier = 1.5;
  ProbeMode mode = ProbeMode::refit_on_training;
  LassoOptions lasso;
  std::size_t workers = 1;
};

struct ProbeEntry {
  std::string feature;
  std::optional<double> r2;  // raw; may be negative
  std::size_t n_used = 0;
  std::size_t n_outliers = 0;
  double lambda = 0.0;
  std::string status = "ok";

  double r2_display() const { return r2 ? std::max(0.0, *r2) : 0.0; }
};

struct ProbeReport {
  std::vector<ProbeEntry> entries;
  std::size_t folds = 0;
  std::size_t grid_points = 0;
  double grid_ratio = 0.0;
  std::string mode;
  std::size_t skipped = 0;
};

/// Probes one feature given already-aligned data.
ProbeEntry probe_feature(const std::string& name, const ProbeDataset& data, const ProbeOptions& opt);

ProbeReport run_probe(const CorpusManifest& manifest, const EmbeddingTable& embeddings, const FeatureTable& features,
                      const ProbeOptions& opt = {});

}  // namespace voxid
