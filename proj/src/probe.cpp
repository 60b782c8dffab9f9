#include "voxid/probe.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "voxid/parallel.hpp"

namespace voxid {
namespace {

struct Standardized {
  Eigen::MatrixXd z;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
};

Standardized standardize(const Eigen::MatrixXd& x) {
  Standardized s;
  const auto n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.z = x.rowwise() - s.mean.transpose();
  s.scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double sd = std::sqrt(s.z.col(j).squaredNorm() / n);
    if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(j)))) {
      s.scale(j) = sd;
      s.z.col(j) /= sd;
    } else {
      s.scale(j) = 0.0;
      s.z.col(j).setZero();
    }
  }
  return s;
}

double objective(const Eigen::VectorXd& residual, const Eigen::VectorXd& w, double lambda) {
  const auto n = static_cast<double>(residual.size());
  return residual.squaredNorm() / (2.0 * n) + lambda * w.lpNorm<1>();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

}  // namespace

ProbeDataset ProbeDataset::subset(std::span<const Eigen::Index> rows_) const {
  ProbeDataset out;
  out.x.resize(static_cast<Eigen::Index>(rows_.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto r = rows_[i];
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
    out.y(static_cast<Eigen::Index>(i)) = y(r);
    out.speakers.push_back(speakers.at(static_cast<std::size_t>(r)));
  }
  return out;
}

double LassoModel::predict_row(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  double acc = intercept;
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (column_scale(j) > 0.0 && weights(j) != 0.0) acc += weights(j) * (row(j) - column_mean(j)) / column_scale(j);
  }
  return acc;
}

Eigen::VectorXd LassoModel::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i).transpose());
  return out;
}

double soft_threshold(double value, double lambda) {
  if (value > lambda) return value - lambda;
  if (value < -lambda) return value + lambda;
  return 0.0;
}

LassoModel fit_lasso(const ProbeDataset& data, double lambda, const LassoOptions& opt,
                     const Eigen::VectorXd* warm_start) {
  if (data.x.rows() != data.y.size() || data.x.rows() < 2) {
    throw std::invalid_argument("fit_lasso: need matching X/y with at least 2 rows");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("fit_lasso: lambda must be >= 0");
  if (!data.x.allFinite() || !data.y.allFinite()) throw std::invalid_argument("fit_lasso: non-finite input");

  const auto s = standardize(data.x);
  const auto n = static_cast<double>(data.x.rows());
  const Eigen::Index d = data.x.cols();

  LassoModel m;
  m.lambda = lambda;
  m.column_mean = s.mean;
  m.column_scale = s.scale;
  m.intercept = data.y.mean();
  m.weights = Eigen::VectorXd::Zero(d);
  if (warm_start != nullptr && warm_start->size() == d) {
    m.weights = *warm_start;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (s.scale(j) == 0.0) m.weights(j) = 0.0;
    }
  }
  Eigen::VectorXd col_sq(d);
  for (Eigen::Index j = 0; j < d; ++j) col_sq(j) = s.z.col(j).squaredNorm() / n;

  Eigen::VectorXd residual = (data.y.array() - m.intercept).matrix() - s.z * m.weights;
  for (m.sweeps = 1; m.sweeps <= opt.max_sweeps; ++m.sweeps) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) == 0.0) continue;
      const double old = m.weights(j);
      const double rho = s.z.col(j).dot(residual) / n + old * col_sq(j);
      const double updated = soft_threshold(rho, lambda) / col_sq(j);
      if (updated != old) {
        residual -= (updated - old) * s.z.col(j);
        m.weights(j) = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    m.objective_history.push_back(objective(residual, m.weights, lambda));
    if (max_change < opt.tol) return m;
  }
  --m.sweeps;
  throw ConvergenceError("fit_lasso: no convergence within " + std::to_string(opt.max_sweeps) +
                         " sweeps at lambda " + format_double(lambda));
}

double lambda_max(const ProbeDataset& data) {
  const auto s = standardize(data.x);
  // Same per-column reduction as the first coordinate-descent sweep, so a fit
  // at exactly lambda_max thresholds every coefficient to zero.
  const Eigen::VectorXd yc = (data.y.array() - data.y.mean()).matrix();
  const auto n = static_cast<double>(data.x.rows());
  double top = 0.0;
  for (Eigen::Index j = 0; j < s.z.cols(); ++j) top = std::max(top, std::abs(s.z.col(j).dot(yc) / n));
  return top;
}

std::vector<double> lambda_grid(const ProbeDataset& data, std::size_t points, double ratio) {
  if (points < 2) throw std::invalid_argument("lambda_grid: need at least 2 points");
  const double top = lambda_max(data);
  if (!(top > 0.0)) throw std::invalid_argument("lambda_grid: target is constant or uncorrelated with every column");
  std::vector<double> grid(points);
  const double lo = std::log(top * ratio), hi = std::log(top);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = std::exp(hi - (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  grid.front() = top;
  return grid;
}

std::vector<std::size_t> iqr_filter(std::span<const double> values, double multiplier) {
  if (values.size() < 4) throw std::invalid_argument("iqr_filter: need at least 4 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double q1 = quantile(0.25), q3 = quantile(0.75);
  const double lo = q1 - multiplier * (q3 - q1), hi = q3 + multiplier * (q3 - q1);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= lo && values[i] <= hi) kept.push_back(i);
  }
  return kept;
}

std::vector<int> grouped_folds(std::span<const std::string> speakers, std::size_t k) {
  if (k < 2) throw std::invalid_argument("grouped_folds: need at least 2 folds");
  std::map<std::string, std::size_t> count;
  for (const auto& s : speakers) ++count[s];
  if (count.size() < k) {
    throw std::invalid_argument("grouped_folds: " + std::to_string(count.size()) + " speakers cannot fill " +
                                std::to_string(k) + " folds");
  }
  std::vector<std::pair<std::string, std::size_t>> order(count.begin(), count.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::size_t> load(k, 0);
  std::map<std::string, int> fold_of;
  for (const auto& [spk, c] : order) {
    const auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    load[f] += c;
    fold_of[spk] = static_cast<int>(f);
  }
  std::vector<int> out;
  out.reserve(speakers.size());
  for (const auto& s : speakers) out.push_back(fold_of.at(s));
  return out;
}

CvResult grouped_cv_select(const ProbeDataset& data, std::span<const double> lambdas, std::size_t k,
                           const LassoOptions& opt) {
  if (lambdas.empty()) throw std::invalid_argument("grouped_cv_select: empty lambda grid");
  CvResult out;
  out.lambdas.assign(lambdas.begin(), lambdas.end());
  std::sort(out.lambdas.begin(), out.lambdas.end(), std::greater<>());
  out.folds = grouped_folds(data.speakers, k);
  const auto n = data.rows();
  const auto nl = static_cast<Eigen::Index>(out.lambdas.size());
  Eigen::MatrixXd oof(n, nl);

  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) (out.folds[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
    const auto train_set = data.subset(train);
    const auto test_set = data.subset(test);
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(data.x.cols());
    for (Eigen::Index l = 0; l < nl; ++l) {
      const auto model = fit_lasso(train_set, out.lambdas[static_cast<std::size_t>(l)], opt, &warm);
      warm = model.weights;
      const auto pred = model.predict(test_set.x);
      for (std::size_t t = 0; t < test.size(); ++t) oof(test[t], l) = pred(static_cast<Eigen::Index>(t));
    }
  }

  out.mean_mse.assign(out.lambdas.size(), 0.0);
  std::size_t best = 0;
  for (Eigen::Index l = 0; l < nl; ++l) {
    // Mean over folds of the per-fold held-out MSE.
    std::vector<double> sse(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto f = static_cast<std::size_t>(out.folds[static_cast<std::size_t>(i)]);
      const double e = data.y(i) - oof(i, l);
      sse[f] += e * e;
      ++cnt[f];
    }
    double acc = 0.0;
    for (std::size_t f = 0; f < k; ++f) acc += sse[f] / static_cast<double>(cnt[f]);
    out.mean_mse[static_cast<std::size_t>(l)] = acc / static_cast<double>(k);
    if (out.mean_mse[static_cast<std::size_t>(l)] < out.mean_mse[best]) best = static_cast<std::size_t>(l);
  }
  out.best_lambda = out.lambdas[best];
  out.held_out_predictions = oof.col(static_cast<Eigen::Index>(best));
  return out;
}

double r2(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw std::invalid_argument("r2: length mismatch");
  if (y.size() < 2) throw std::invalid_argument("r2: need at least 2 values");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += (y[i] - mean) * (y[i] - mean);
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  }
  if (!(ss_tot > 0.0)) throw std::invalid_argument("r2: target has zero variance");
  return 1.0 - ss_res / ss_tot;
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_feature_table: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_feature_table: empty file " + path.string());
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "speaker") {
    throw std::runtime_error("read_feature_table: header must start with 'id,speaker'");
  }
  FeatureTable t;
  t.columns.assign(header.begin() + 2, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("read_feature_table: row " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
    }
    FeatureTable::Row row{cells[0], cells[1], {}};
    for (std::size_t c = 2; c < cells.size(); ++c) {
      if (cells[c].empty() || cells[c] == "nan" || cells[c] == "NA") {
        row.values.emplace_back();
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(cells[c], &used);
        if (used != cells[c].size() || !std::isfinite(v)) throw std::invalid_argument(cells[c]);
        row.values.emplace_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("read_feature_table: bad number '" + cells[c] + "' on row " + std::to_string(line_no));
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_feature_table(const std::filesystem::path& path, const FeatureTable& table) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_feature_table: cannot open " + path.string());
  out << "id,speaker";
  for (const auto& c : table.columns) out << ',' << c;
  out << '\n';
  for (const auto& r : table.rows) {
    out << r.id << ',' << r.speaker;
    for (const auto& v : r.values) {
      out << ',';
      if (v) out << format_double(*v);
    }
    out << '\n';
  }
}

ProbeEntry probe_feature(const std::string& name, const ProbeDataset& data, const ProbeOptions& opt) {
  ProbeEntry e;
  e.feature = name;
  if (data.rows() < 4) {
    e.status = "skipped: fewer than 4 values";
    return e;
  }
  const std::vector<double> y(data.y.data(), data.y.data() + data.y.size());
  const auto kept = iqr_filter(y, opt.iqr_multiplier);
  e.n_outliers = y.size() - kept.size();
  std::vector<Eigen::Index> rows(kept.begin(), kept.end());
  const auto filtered = data.subset(rows);
  e.n_used = kept.size();
  if (filtered.rows() < 10) {
    e.status = "skipped: fewer than 10 values after outlier removal";
    return e;
  }
  const double mean = filtered.y.mean();
  if ((filtered.y.array() - mean).abs().maxCoeff() == 0.0) {
    e.status = "skipped: degenerate feature (zero variance)";
    return e;
  }
  std::set<std::string> distinct(filtered.speakers.begin(), filtered.speakers.end());
  if (distinct.size() < opt.folds) {
    e.status = "skipped: fewer speakers than folds";
    return e;
  }
  std::vector<double> grid;
  try {
    grid = lambda_grid(filtered, opt.grid_points, opt.grid_ratio);
  } catch (const std::invalid_argument& ex) {
    e.status = std::string("skipped: ") + ex.what();
    return e;
  }
  const auto cv = grouped_cv_select(filtered, grid, opt.folds, opt.lasso);
  e.lambda = cv.best_lambda;
  const std::vector<double> target(filtered.y.data(), filtered.y.data() + filtered.y.size());
  Eigen::VectorXd pred;
  if (opt.mode == ProbeMode::held_out) {
    pred = cv.held_out_predictions;
  } else {
    pred = fit_lasso(filtered, cv.best_lambda, opt.lasso).predict(filtered.x);
  }
  e.r2 = r2(target, std::vector<double>(pred.data(), pred.data() + pred.size()));
  return e;
}

ProbeReport run_probe(const CorpusManifest& manifest, const EmbeddingTable& embeddings, const FeatureTable& features,
                      const ProbeOptions& opt) {
  std::map<std::string, const UtteranceRecord*> known;
  for (const auto& u : manifest.utterances) known[u.id] = &u;
  std::vector<const FeatureTable::Row*> shared;
  for (const auto& row : features.rows) {
    if (known.count(row.id) && embeddings.base.count(row.id)) shared.push_back(&row);
  }
  if (shared.empty()) throw std::runtime_error("run_probe: feature table and manifest share no utterance ids");
  const auto dim = static_cast<Eigen::Index>(manifest.embedding_dim);

  ProbeReport report;
  report.folds = opt.folds;
  report.grid_points = opt.grid_points;
  report.grid_ratio = opt.grid_ratio;
  report.mode = opt.mode == ProbeMode::held_out ? "held_out" : "refit_on_training";
  report.entries.resize(features.columns.size());

  parallel_for(features.columns.size(), opt.workers, [&](std::size_t c) {
    std::vector<const FeatureTable::Row*> rows;
    for (const auto* r : shared) {
      if (r->values[c]) rows.push_back(r);
    }
    ProbeDataset data;
    data.x.resize(static_cast<Eigen::Index>(rows.size()), dim);
    data.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& emb = embeddings.base.at(rows[i]->id).values;
      for (Eigen::Index j = 0; j < dim; ++j) data.x(static_cast<Eigen::Index>(i), j) = emb[static_cast<std::size_t>(j)];
      data.y(static_cast<Eigen::Index>(i)) = *rows[i]->values[c];
      data.speakers.push_back(known.at(rows[i]->id)->speaker_id);
    }
    report.entries[c] = probe_feature(features.columns[c], data, opt);
  });
  for (const auto& e : report.entries) {
    if (!e.r2) ++report.skipped;
  }
  return report;
}

}  // namespace voxid
