#include "looptwin/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "looptwin/rng.hpp"

namespace looptwin {

DataSplit DataSplit::make(int n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("split: negative dataset size");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).substream("split");
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(order[i], order[j]);
  }
  int n_val = n / 10;
  int n_test = n / 10;
  DataSplit s;
  s.val.assign(order.begin(), order.begin() + n_val);
  s.test.assign(order.begin() + n_val, order.begin() + n_val + n_test);
  s.train.assign(order.begin() + n_val + n_test, order.end());
  return s;
}

const std::vector<int>& DataSplit::part(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw std::invalid_argument("split: unknown partition " + name);
}

std::string TrainResult::history_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  char buf[80];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
    out << buf;
  }
  return out.str();
}

namespace {

double mean_loss(TwinModel<float>& model, const std::vector<SimGraph>& data,
                 const std::vector<int>& idx) {
  double sum = 0.0;
  for (int i : idx) {
    auto l = model.loss_on(data[i], false, nullptr);
    sum += l->v[0];
    model.tape.clear();
  }
  return idx.empty() ? 0.0 : sum / static_cast<double>(idx.size());
}

std::vector<std::vector<float>> snapshot_params(const ParamSet<float>& params) {
  std::vector<std::vector<float>> snap;
  snap.reserve(params.list.size());
  for (const auto& p : params.list) snap.push_back(p->v);
  return snap;
}

void restore_params(ParamSet<float>& params, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.list.size(); ++i) params.list[i]->v = snap[i];
}

}  // namespace

TrainResult train_model(TwinModel<float>& model, const std::vector<SimGraph>& data,
                        const std::vector<int>& train_idx, const std::vector<int>& val_idx,
                        const TrainOptions& opt) {
  if (opt.max_epochs < 1) throw std::invalid_argument("train: max_epochs must be positive");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (opt.lr < 0.0) throw std::invalid_argument("train: negative learning rate");
  if (opt.patience < 0) throw std::invalid_argument("train: negative patience");
  if (train_idx.empty()) throw std::invalid_argument("train: empty training set");
  for (int i : train_idx)
    if (i < 0 || i >= static_cast<int>(data.size()))
      throw std::invalid_argument("train: index out of range");

  Rng root(opt.seed);
  Rng drop_rng = root.substream("dropout");
  Adam<float> adam(opt.lr);
  TrainResult res;
  double best_val = std::numeric_limits<double>::infinity();
  double patience_ref = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_snap;
  int bad_epochs = 0;
  bool capped = false;

  for (int epoch = 1; epoch <= opt.max_epochs && !capped; ++epoch) {
    std::vector<int> order = train_idx;
    Rng er = root.substream("order", static_cast<std::uint64_t>(epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = static_cast<int>(er.uniform_int(0, i));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    long epoch_items = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t batch = std::min<std::size_t>(opt.batch_size, order.size() - pos);
      model.params.zero_grads();
      for (std::size_t b = 0; b < batch; ++b) {
        auto item = model.loss_on(data[order[pos + b]], true, &drop_rng);
        double lv = item->v[0];
        if (!std::isfinite(lv))
          throw std::runtime_error("train: loss diverged at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(res.steps + 1));
        epoch_loss += lv;
        ++epoch_items;
        auto scaled = model.tape.scale(item, 1.0 / static_cast<double>(batch));
        model.tape.backward(scaled);
        model.tape.clear();
      }
      adam.step(model.params.list);
      ++res.steps;
      pos += batch;
      if (opt.max_steps > 0 && res.steps >= opt.max_steps) {
        capped = true;
        break;
      }
    }

    double train_loss = epoch_loss / static_cast<double>(epoch_items);
    double val_loss = val_idx.empty() ? train_loss : mean_loss(model, data, val_idx);
    if (!std::isfinite(val_loss))
      throw std::runtime_error("train: validation loss diverged at epoch " +
                               std::to_string(epoch) + " step " + std::to_string(res.steps));
    res.history.push_back({epoch, train_loss, val_loss});
    if (opt.verbose)
      std::fprintf(stderr, "epoch %d train %.6f val %.6f\n", epoch, train_loss, val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      res.best_val_loss = val_loss;
      res.best_epoch = epoch;
      best_snap = snapshot_params(model.params);
    }
    if (val_loss < patience_ref - opt.min_delta) {
      patience_ref = val_loss;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= opt.patience && opt.patience > 0) {
        res.stopped_early = true;
        break;
      }
    }
  }

  if (!best_snap.empty()) restore_params(model.params, best_snap);
  return res;
}

double ci95_half_width(double rmse) { return 1.96 * rmse; }

std::vector<double> aggregate_series(const std::vector<double>& v, int factor) {
  if (factor < 1) throw std::invalid_argument("aggregate: factor must be positive");
  std::size_t groups = v.size() / static_cast<std::size_t>(factor);
  std::vector<double> out(groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (int k = 0; k < factor; ++k) out[g] += v[g * factor + k];
  return out;
}

double MetricsReport::mae_at(int seconds) const {
  for (const auto& h : horizons)
    if (h.seconds == seconds) return h.mae;
  throw std::invalid_argument("metrics: no horizon at " + std::to_string(seconds) + " s");
}

double MetricsReport::rmse_at(int seconds) const {
  for (const auto& h : horizons)
    if (h.seconds == seconds) return h.rmse;
  throw std::invalid_argument("metrics: no horizon at " + std::to_string(seconds) + " s");
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["horizons"] = nlohmann::json::array();
  for (const auto& h : horizons)
    j["horizons"].push_back({{"seconds", h.seconds}, {"mae", h.mae}, {"rmse", h.rmse}});
  j["val_mse"] = val_mse;
  j["val_rmse"] = val_rmse;
  j["ci95"] = ci95;
  j["cells"] = cells;
  return j;
}

namespace {

constexpr int kFactors[4] = {1, 2, 3, 4};

struct MetricAccum {
  double abs_sum[4] = {0, 0, 0, 0};
  double sq_sum[4] = {0, 0, 0, 0};
  long n[4] = {0, 0, 0, 0};

  void add_row(const std::vector<double>& pred, const std::vector<double>& truth) {
    for (int f = 0; f < 4; ++f) {
      auto p = aggregate_series(pred, kFactors[f]);
      auto t = aggregate_series(truth, kFactors[f]);
      for (std::size_t b = 0; b < p.size(); ++b) {
        double d = p[b] - t[b];
        abs_sum[f] += std::abs(d);
        sq_sum[f] += d * d;
        ++n[f];
      }
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    for (int f = 0; f < 4; ++f) {
      long c = std::max(1L, n[f]);
      r.horizons.push_back({kFactors[f] * kBucketSeconds, abs_sum[f] / c,
                            std::sqrt(sq_sum[f] / c)});
    }
    r.cells = n[0];
    r.val_mse = sq_sum[0] / std::max(1L, n[0]);
    r.val_rmse = std::sqrt(r.val_mse);
    r.ci95 = ci95_half_width(r.val_rmse);
    return r;
  }
};

void check_idx(const std::vector<SimGraph>& data, const std::vector<int>& idx) {
  for (int i : idx)
    if (i < 0 || i >= static_cast<int>(data.size()))
      throw std::invalid_argument("metrics: index out of range");
}

}  // namespace

MetricsReport evaluate_model(TwinModel<float>& model, const std::vector<SimGraph>& data,
                             const std::vector<int>& idx) {
  check_idx(data, idx);
  MetricAccum acc;
  std::vector<double> pred(kWindow), truth(kWindow);
  for (int i : idx) {
    const SimGraph& g = data[i];
    auto xhat = model.forward(g, false, nullptr);
    for (int node = 0; node < g.nodes(); ++node) {
      if (!g.is_target[node] || g.dummy[node]) continue;
      for (int b = 0; b < g.w; ++b) {
        pred[b] = xhat->v[node * g.w + b];
        truth[b] = g.target_at(node, b);
      }
      acc.add_row(pred, truth);
    }
    model.tape.clear();
  }
  return acc.report();
}

MetricsReport evaluate_zero(const std::vector<SimGraph>& data, const std::vector<int>& idx) {
  check_idx(data, idx);
  MetricAccum acc;
  std::vector<double> pred(kWindow, 0.0), truth(kWindow);
  for (int i : idx) {
    const SimGraph& g = data[i];
    for (int node = 0; node < g.nodes(); ++node) {
      if (!g.is_target[node] || g.dummy[node]) continue;
      for (int b = 0; b < g.w; ++b) truth[b] = g.target_at(node, b);
      acc.add_row(pred, truth);
    }
  }
  return acc.report();
}

namespace {

// Per-slot per-bucket target means over the graphs of train_idx; slots never
// observed stay at zero.
std::vector<std::vector<double>> slot_means(const std::vector<SimGraph>& data,
                                            const std::vector<int>& train_idx) {
  if (train_idx.empty()) throw std::invalid_argument("metrics: empty training set for means");
  int nodes = data[train_idx.front()].nodes();
  int w = data[train_idx.front()].w;
  std::vector<std::vector<double>> mean(nodes, std::vector<double>(w, 0.0));
  std::vector<long> count(nodes, 0);
  for (int i : train_idx) {
    const SimGraph& g = data[i];
    if (g.nodes() != nodes) throw std::invalid_argument("metrics: mixed graph templates");
    for (int node = 0; node < nodes; ++node) {
      if (!g.is_target[node] || g.dummy[node]) continue;
      for (int b = 0; b < w; ++b) mean[node][b] += g.target_at(node, b);
      ++count[node];
    }
  }
  for (int node = 0; node < nodes; ++node)
    if (count[node] > 0)
      for (int b = 0; b < w; ++b) mean[node][b] /= static_cast<double>(count[node]);
  return mean;
}

}  // namespace

MetricsReport evaluate_mean(const std::vector<SimGraph>& data, const std::vector<int>& train_idx,
                            const std::vector<int>& idx) {
  check_idx(data, train_idx);
  check_idx(data, idx);
  auto mean = slot_means(data, train_idx);
  MetricAccum acc;
  std::vector<double> truth(kWindow);
  for (int i : idx) {
    const SimGraph& g = data[i];
    for (int node = 0; node < g.nodes(); ++node) {
      if (!g.is_target[node] || g.dummy[node]) continue;
      for (int b = 0; b < g.w; ++b) truth[b] = g.target_at(node, b);
      acc.add_row(mean[node], truth);
    }
  }
  return acc.report();
}

double baseline_zero_mse(const std::vector<SimGraph>& data, const std::vector<int>& idx) {
  return evaluate_zero(data, idx).val_mse;
}

double baseline_mean_mse(const std::vector<SimGraph>& data, const std::vector<int>& train_idx,
                         const std::vector<int>& idx) {
  return evaluate_mean(data, train_idx, idx).val_mse;
}

namespace {

std::string lane_group(const std::string& label) {
  std::size_t end = label.size();
  while (end > 0 && std::isdigit(static_cast<unsigned char>(label[end - 1]))) --end;
  return label.substr(0, end);
}

}  // namespace

std::string export_latents_csv(TwinModel<float>& model, const std::vector<SimGraph>& data,
                               const std::vector<int>& idx) {
  check_idx(data, idx);
  struct Row {
    std::string record;
    int node;
    std::string label;
    std::string group;
  };
  std::vector<Row> rows;
  std::vector<std::vector<double>> latents;
  int dim = 0;
  for (int i : idx) {
    const SimGraph& g = data[i];
    auto h = model.encode(g);
    dim = static_cast<int>(h->shape[1]);
    for (int node = 0; node < g.nodes(); ++node) {
      if (g.dummy[node]) continue;
      std::string label = graph_node_label(g.kind, node);
      rows.push_back({g.record_id, node, label, lane_group(label)});
      std::vector<double> z(dim);
      for (int c = 0; c < dim; ++c) z[c] = h->v[node * dim + c];
      latents.push_back(std::move(z));
    }
    model.tape.clear();
  }

  // 2-component principal projection of the centered latents; the dominant
  // loading of each component is forced positive so output is sign stable.
  std::size_t m = latents.size();
  Eigen::MatrixXd pcs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 2);
  if (m >= 2 && dim >= 1) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(m), dim);
    for (std::size_t r = 0; r < m; ++r)
      for (int c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(r), c) = latents[r][c];
    Eigen::RowVectorXd mu = x.colwise().mean();
    x.rowwise() -= mu;
    Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    int comps = std::min(2, dim);
    for (int k = 0; k < comps; ++k) {
      Eigen::VectorXd v = solver.eigenvectors().col(dim - 1 - k);
      Eigen::Index peak = 0;
      v.cwiseAbs().maxCoeff(&peak);
      if (v(peak) < 0.0) v = -v;
      pcs.col(k) = x * v;
    }
  }

  std::ostringstream out;
  out << "record,node,label,group";
  for (int c = 0; c < dim; ++c) out << ",z" << c;
  out << ",pc1,pc2\n";
  char buf[48];
  for (std::size_t r = 0; r < m; ++r) {
    out << rows[r].record << ',' << rows[r].node << ',' << rows[r].label << ',' << rows[r].group;
    for (int c = 0; c < dim; ++c) {
      std::snprintf(buf, sizeof(buf), ",%.9g", latents[r][c]);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g\n", pcs(static_cast<Eigen::Index>(r), 0),
                  pcs(static_cast<Eigen::Index>(r), 1));
    out << buf;
  }
  return out.str();
}

std::string LinearExplanation::ranking_csv() const {
  std::size_t k = feature_names.size();
  std::vector<double> mean_abs(k, 0.0);
  for (const auto& row : shapley)
    for (std::size_t j = 0; j < k; ++j) mean_abs[j] += std::abs(row[j]);
  if (!shapley.empty())
    for (auto& v : mean_abs) v /= static_cast<double>(shapley.size());
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_abs[a] > mean_abs[b]; });
  std::ostringstream out;
  out << "rank,feature,coefficient,mean_abs_attribution\n";
  char buf[96];
  for (std::size_t r = 0; r < k; ++r) {
    std::size_t j = order[r];
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.17g,%.17g\n", r + 1, feature_names[j].c_str(),
                  coef[j], mean_abs[j]);
    out << buf;
  }
  return out.str();
}

LinearExplanation fit_linear_attribution(const std::vector<std::vector<double>>& features,
                                         const std::vector<double>& response,
                                         const std::vector<std::string>& names) {
  std::size_t m = features.size();
  std::size_t k = names.size();
  if (m == 0) throw std::invalid_argument("explain: empty sample set");
  if (response.size() != m) throw std::invalid_argument("explain: response size mismatch");
  for (const auto& row : features)
    if (row.size() != k) throw std::invalid_argument("explain: feature width mismatch");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    y(static_cast<Eigen::Index>(i)) = response[i];
    for (std::size_t j = 0; j < k; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = features[i][j];
  }
  Eigen::RowVectorXd mu = x.colwise().mean();
  double ymean = y.mean();
  Eigen::MatrixXd xc = x.rowwise() - mu;
  Eigen::VectorXd yc = y.array() - ymean;

  LinearExplanation ex;
  ex.feature_names = names;
  ex.feature_mean.assign(mu.data(), mu.data() + k);

  Eigen::VectorXd beta;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
  if (m > k && qr.rank() == static_cast<Eigen::Index>(k)) {
    beta = qr.solve(yc);
  } else {
    // Rank-deficient design; a small ridge penalty keeps the solve defined.
    ex.ridge_fallback = true;
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += 1e-6;
    beta = gram.ldlt().solve(xc.transpose() * yc);
  }

  ex.coef.assign(beta.data(), beta.data() + k);
  ex.intercept = ymean - mu * beta;
  Eigen::VectorXd residual = yc - xc * beta;
  double ss_res = residual.squaredNorm();
  double ss_tot = yc.squaredNorm();
  ex.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;

  ex.response = response;
  ex.shapley.assign(m, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      ex.shapley[i][j] = ex.coef[j] * (features[i][j] - ex.feature_mean[j]);
  return ex;
}

std::vector<std::string> scenario_feature_names() {
  std::vector<std::string> names;
  for (const auto& r : kBehaviorRanges) names.push_back(std::string("drv_") + r.name);
  for (int a = 0; a < 4; ++a)
    for (int m = 0; m < 3; ++m)
      names.push_back(std::string("tmc_") + kApproachNames[a] + "_" + kMovementNames[m]);
  names.push_back("cycle_s");
  names.push_back("barrier_s");
  for (int p = 1; p <= 8; ++p) names.push_back("green_frac_p" + std::to_string(p));
  return names;
}

std::vector<double> scenario_features(const SimulationRecord& rec) {
  std::vector<double> f;
  auto drv = rec.drv.as_array();
  f.insert(f.end(), drv.begin(), drv.end());
  auto tmc = rec.tmc.flattened();
  f.insert(f.end(), tmc.begin(), tmc.end());
  f.push_back(rec.plan.cycle_length_s);
  f.push_back(rec.plan.barrier_time_s);
  for (int p = 1; p <= 8; ++p)
    f.push_back(rec.plan.phase(p).green_s / rec.plan.cycle_length_s);
  return f;
}

double mean_predicted_magnitude(TwinModel<float>& model, const SimGraph& g) {
  auto xhat = model.forward(g, false, nullptr);
  double sum = 0.0;
  long n = 0;
  for (int node = 0; node < g.nodes(); ++node) {
    if (!g.is_target[node] || g.dummy[node]) continue;
    for (int b = 0; b < g.w; ++b) {
      sum += xhat->v[node * g.w + b];
      ++n;
    }
  }
  model.tape.clear();
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

LinearExplanation explain_linear(TwinModel<float>& model,
                                 const std::vector<SimulationRecord>& records,
                                 const std::vector<SimGraph>& graphs) {
  if (records.size() != graphs.size())
    throw std::invalid_argument("explain: records and graphs must align");
  std::vector<std::vector<double>> features;
  std::vector<double> response;
  features.reserve(records.size());
  response.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    features.push_back(scenario_features(records[i]));
    response.push_back(mean_predicted_magnitude(model, graphs[i]));
  }
  return fit_linear_attribution(features, response, scenario_feature_names());
}

}  // namespace looptwin
