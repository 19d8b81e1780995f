#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "looptwin/harness.hpp"
#include "looptwin/simkit.hpp"

using namespace looptwin;

namespace {

std::vector<SimGraph> make_exit_graphs(int n, std::uint64_t seed,
                                       const std::vector<std::string>& topos,
                                       std::vector<SimulationRecord>* records_out = nullptr) {
  CorpusSpec spec;
  spec.n_scenarios = n;
  for (const auto& t : topos) spec.topologies.push_back(IntersectionTopology::builtin(t));
  spec.regime = Regime::Mixed;
  spec.seed = seed;
  spec.jobs = 1;
  auto recs = generate_corpus(spec);
  std::vector<SimGraph> graphs;
  for (const auto& r : recs) graphs.push_back(build_exit_graph(r, r.topology));
  if (records_out) *records_out = recs;
  return graphs;
}

TwinConfig tiny_config() {
  TwinConfig cfg;
  cfg.kind = TemplateKind::Exit;
  cfg.latent = 8;
  cfg.gat_heads = 1;
  cfg.sa_heads = 1;
  cfg.sa_dk = 2;
  cfg.edge_proj = 4;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<std::vector<float>> param_values(const TwinModel<float>& m) {
  std::vector<std::vector<float>> out;
  for (const auto& p : m.params.list) out.push_back(p->v);
  return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("data split partitions deterministically") {
  DataSplit a = DataSplit::make(50, 9);
  DataSplit b = DataSplit::make(50, 9);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(static_cast<int>(a.val.size()) == 5);
  CHECK(static_cast<int>(a.test.size()) == 5);
  CHECK(static_cast<int>(a.train.size()) == 40);

  std::set<int> seen;
  for (const auto* part : {&a.train, &a.val, &a.test})
    for (int i : *part) {
      CHECK(i >= 0);
      CHECK(i < 50);
      CHECK(seen.insert(i).second);
    }
  CHECK(seen.size() == 50);

  DataSplit c = DataSplit::make(50, 10);
  CHECK(a.val != c.val);

  CHECK(&a.part("train") == &a.train);
  CHECK(&a.part("val") == &a.val);
  CHECK(&a.part("test") == &a.test);
  CHECK_THROWS_AS(a.part("holdout"), std::invalid_argument);
}

TEST_CASE("training is reproducible for a fixed seed") {
  auto graphs = make_exit_graphs(8, 60, {"full"});
  std::vector<int> tr = {0, 1, 2, 3, 4, 5}, va = {6, 7};
  TrainOptions opt;
  opt.max_epochs = 3;
  opt.seed = 21;

  TwinConfig cfg = tiny_config();
  cfg.dropout = 0.1;
  TwinModel<float> m1, m2;
  m1.init(cfg, 33);
  m2.init(cfg, 33);
  TrainResult r1 = train_model(m1, graphs, tr, va, opt);
  TrainResult r2 = train_model(m2, graphs, tr, va, opt);
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
  }
  CHECK(r1.best_val_loss == r2.best_val_loss);
  CHECK(param_values(m1) == param_values(m2));
  CHECK(r1.history_csv() == r2.history_csv());
  CHECK(r1.history_csv().rfind("epoch,train_loss,val_loss\n", 0) == 0);
}

TEST_CASE("zero learning rate leaves parameters alone and trips patience") {
  auto graphs = make_exit_graphs(6, 61, {"full"});
  std::vector<int> tr = {0, 1, 2, 3}, va = {4, 5};
  TwinModel<float> model;
  model.init(tiny_config(), 17);
  auto before = param_values(model);

  TrainOptions opt;
  opt.max_epochs = 10;
  opt.lr = 0.0;
  opt.patience = 2;
  TrainResult res = train_model(model, graphs, tr, va, opt);
  CHECK(param_values(model) == before);
  CHECK(res.stopped_early);
  CHECK(res.best_epoch == 1);
  REQUIRE(res.history.size() == 3);
  CHECK(res.history[0].val_loss == res.history[1].val_loss);
  CHECK(res.history[1].val_loss == res.history[2].val_loss);
  CHECK(res.history[0].epoch == 1);
  CHECK(res.history[2].epoch == 3);
}

TEST_CASE("step cap halts mid epoch and the best epoch is restored") {
  auto graphs = make_exit_graphs(6, 62, {"full"});
  std::vector<int> tr = {0, 1, 2, 3}, va = {4, 5};
  TwinModel<float> model;
  model.init(tiny_config(), 18);
  TrainOptions opt;
  opt.max_epochs = 10;
  opt.max_steps = 6;
  TrainResult res = train_model(model, graphs, tr, va, opt);
  CHECK(res.steps == 6);
  CHECK(res.history.size() == 2);

  // The returned parameters reproduce the best validation loss exactly.
  double revalidated = 0;
  for (int i : va) {
    revalidated += model.loss_on(graphs[i], false, nullptr)->v[0];
    model.tape.clear();
  }
  revalidated /= va.size();
  CHECK(revalidated == doctest::Approx(res.best_val_loss).epsilon(1e-12));
}

TEST_CASE("training validates its options") {
  auto graphs = make_exit_graphs(2, 63, {"full"});
  TwinModel<float> model;
  model.init(tiny_config(), 19);
  TrainOptions opt;
  std::vector<int> tr = {0}, va = {1};
  opt.max_epochs = 0;
  CHECK_THROWS_AS(train_model(model, graphs, tr, va, opt), std::invalid_argument);
  opt = TrainOptions{};
  opt.batch_size = 0;
  CHECK_THROWS_AS(train_model(model, graphs, tr, va, opt), std::invalid_argument);
  opt = TrainOptions{};
  opt.lr = -0.1;
  CHECK_THROWS_AS(train_model(model, graphs, tr, va, opt), std::invalid_argument);
  opt = TrainOptions{};
  CHECK_THROWS_AS(train_model(model, graphs, {}, va, opt), std::invalid_argument);
  CHECK_THROWS_AS(train_model(model, graphs, {5}, va, opt), std::invalid_argument);
}

TEST_CASE("aggregation sums bucket groups and drops the remainder") {
  std::vector<double> v(10);
  for (int i = 0; i < 10; ++i) v[i] = i + 1;
  CHECK(aggregate_series(v, 1) == v);
  CHECK(aggregate_series(v, 2) == std::vector<double>{3, 7, 11, 15, 19});
  CHECK(aggregate_series(v, 3) == std::vector<double>{6, 15, 24});
  CHECK(aggregate_series(v, 4) == std::vector<double>{10, 26});
  CHECK_THROWS_AS(aggregate_series(v, 0), std::invalid_argument);
}

TEST_CASE("an off-by-one prediction yields the laddered horizon errors") {
  auto graphs = make_exit_graphs(3, 64, {"full"});
  for (auto& g : graphs)
    for (int i = 0; i < g.nodes(); ++i)
      if (g.is_target[i] && !g.dummy[i])
        for (int b = 0; b < g.w; ++b) g.targets[static_cast<std::size_t>(i) * g.w + b] = 2.0;

  TwinModel<float> model;
  model.init(tiny_config(), 20);
  std::fill(model.decoder().W->v.begin(), model.decoder().W->v.end(), 0.0f);
  std::fill(model.decoder().b->v.begin(), model.decoder().b->v.end(), 3.0f);

  std::vector<int> idx = {0, 1, 2};
  MetricsReport rep = evaluate_model(model, graphs, idx);
  REQUIRE(rep.horizons.size() == 4);
  CHECK(rep.horizons[0].seconds == 5);
  CHECK(rep.horizons[3].seconds == 20);
  CHECK(rep.mae_at(5) == 1.0);
  CHECK(rep.mae_at(10) == 2.0);
  CHECK(rep.mae_at(15) == 3.0);
  CHECK(rep.mae_at(20) == 4.0);
  CHECK(rep.rmse_at(5) == 1.0);
  CHECK(rep.rmse_at(20) == 4.0);
  CHECK(rep.val_mse == 1.0);
  CHECK(rep.val_rmse == 1.0);
  CHECK(rep.ci95 == 1.96 * rep.val_rmse);
  CHECK(rep.cells == 3 * 11 * 80);

  auto j = rep.to_json();
  CHECK(j.at("ci95").get<double>() == rep.ci95);
  CHECK(j.at("horizons").size() == 4);
}

TEST_CASE("interval half width is the gaussian band") {
  CHECK(ci95_half_width(0.30046) == 1.96 * 0.30046);
  CHECK(ci95_half_width(0.30046) == doctest::Approx(0.5889).epsilon(1e-3));
  CHECK(ci95_half_width(0.0) == 0.0);
}

TEST_CASE("zero baseline scores the raw targets") {
  auto graphs = make_exit_graphs(4, 65, {"full", "tee"});
  std::vector<int> idx = {0, 1, 2, 3};
  MetricsReport rep = evaluate_zero(graphs, idx);
  double ss = 0;
  long n = 0;
  for (int gi : idx)
    for (int node = 0; node < graphs[gi].nodes(); ++node) {
      if (!graphs[gi].is_target[node] || graphs[gi].dummy[node]) continue;
      for (int b = 0; b < graphs[gi].w; ++b) {
        double t = graphs[gi].target_at(node, b);
        ss += t * t;
        ++n;
      }
    }
  CHECK(rep.cells == n);
  CHECK(rep.val_mse == doctest::Approx(ss / n).epsilon(1e-12));
  CHECK(rep.val_rmse == doctest::Approx(std::sqrt(ss / n)).epsilon(1e-12));
  CHECK(baseline_zero_mse(graphs, idx) == rep.val_mse);
  for (const auto& h : rep.horizons) CHECK(h.mae <= h.rmse + 1e-12);
}

TEST_CASE("mean baseline beats the zero baseline on its own training set") {
  auto graphs = make_exit_graphs(8, 66, {"full", "tee"});
  std::vector<int> tr = {0, 1, 2, 3, 4, 5};
  double mean_mse = baseline_mean_mse(graphs, tr, tr);
  double zero_mse = baseline_zero_mse(graphs, tr);
  CHECK(mean_mse <= zero_mse + 1e-12);
  CHECK(mean_mse < zero_mse);
  MetricsReport rep = evaluate_mean(graphs, tr, {6, 7});
  CHECK(rep.cells > 0);
  for (const auto& h : rep.horizons) CHECK(h.mae <= h.rmse + 1e-12);
}

TEST_CASE("model metrics keep mae below rmse") {
  auto graphs = make_exit_graphs(3, 67, {"full"});
  TwinModel<float> model;
  model.init(tiny_config(), 23);
  MetricsReport rep = evaluate_model(model, graphs, {0, 1, 2});
  for (const auto& h : rep.horizons) {
    CHECK(h.mae <= h.rmse + 1e-12);
    CHECK(h.rmse >= 0.0);
  }
  CHECK(rep.ci95 == 1.96 * rep.val_rmse);
}

TEST_CASE("latent export lists every live node with two principal columns") {
  auto graphs = make_exit_graphs(3, 68, {"full", "tee"});
  TwinModel<float> model;
  TwinConfig cfg = tiny_config();
  model.init(cfg, 24);
  std::string csv = export_latents_csv(model, graphs, {0, 1, 2});
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  std::string header = "record,node,label,group";
  for (int z = 0; z < cfg.latent; ++z) header += ",z" + std::to_string(z);
  header += ",pc1,pc2";
  CHECK(line == header);

  long live = 0;
  for (int gi : {0, 1, 2})
    for (int node = 0; node < graphs[gi].nodes(); ++node)
      if (!graphs[gi].dummy[node]) ++live;
  long rows = 0;
  std::size_t cols = std::count(header.begin(), header.end(), ',') + 1;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') + 1 == static_cast<long>(cols));
  }
  CHECK(rows == live);
}

TEST_CASE("the linear surrogate recovers exact coefficients") {
  Rng rng(70);
  const int m = 40, k = 3;
  std::vector<double> beta = {2.5, -1.0, 0.5};
  const double intercept = 4.0;
  std::vector<std::vector<double>> X(m, std::vector<double>(k));
  std::vector<double> y(m);
  for (int i = 0; i < m; ++i) {
    y[i] = intercept;
    for (int j = 0; j < k; ++j) {
      X[i][j] = rng.uniform(0.0, 1.0);
      y[i] += beta[j] * X[i][j];
    }
  }
  LinearExplanation ex = fit_linear_attribution(X, y, {"a", "b", "c"});
  CHECK_FALSE(ex.ridge_fallback);
  for (int j = 0; j < k; ++j) CHECK(std::abs(ex.coef[j] - beta[j]) < 1e-8);
  CHECK(std::abs(ex.intercept - intercept) < 1e-8);
  CHECK(ex.r2 > 1.0 - 1e-10);
  REQUIRE(static_cast<int>(ex.shapley.size()) == m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      CHECK(ex.shapley[i][j] == ex.coef[j] * (X[i][j] - ex.feature_mean[j]));

  std::istringstream in(ex.ranking_csv());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "rank,feature,coefficient,mean_abs_attribution");
  double prev = 1e300;
  int seen = 0;
  while (std::getline(in, line)) {
    ++seen;
    auto last = line.rfind(',');
    double attr = std::stod(line.substr(last + 1));
    CHECK(attr <= prev);
    prev = attr;
  }
  CHECK(seen == k);
}

TEST_CASE("a duplicated column forces the ridge fallback") {
  Rng rng(71);
  const int m = 30;
  std::vector<std::vector<double>> X(m, std::vector<double>(3));
  std::vector<double> y(m);
  for (int i = 0; i < m; ++i) {
    X[i][0] = rng.uniform(0.0, 1.0);
    X[i][1] = X[i][0];
    X[i][2] = rng.uniform(0.0, 1.0);
    y[i] = 3.0 * X[i][0] + X[i][2];
  }
  LinearExplanation dup = fit_linear_attribution(X, y, {"a", "a2", "c"});
  CHECK(dup.ridge_fallback);
  CHECK(dup.r2 > 0.99);

  // Fewer samples than features is also rank deficient.
  std::vector<std::vector<double>> tiny = {{1, 2, 3}, {4, 5, 6}};
  LinearExplanation small = fit_linear_attribution(tiny, {1.0, 2.0}, {"a", "b", "c"});
  CHECK(small.ridge_fallback);
}

TEST_CASE("scenario descriptors mirror the record") {
  std::vector<SimulationRecord> recs;
  make_exit_graphs(1, 72, {"full"}, &recs);
  const SimulationRecord& rec = recs[0];
  auto names = scenario_feature_names();
  auto f = scenario_features(rec);
  REQUIRE(names.size() == 31);
  REQUIRE(f.size() == 31);
  auto drv = rec.drv.as_array();
  for (int i = 0; i < 9; ++i) {
    CHECK(names[i].rfind("drv_", 0) == 0);
    CHECK(f[i] == drv[i]);
  }
  CHECK(names[9] == "tmc_EB_" + std::string(kMovementNames[0]));
  CHECK(names[20] == "tmc_SB_" + std::string(kMovementNames[2]));
  auto tmc = rec.tmc.flattened();
  for (int i = 0; i < 12; ++i) CHECK(f[9 + i] == tmc[i]);
  CHECK(names[21] == "cycle_s");
  CHECK(f[21] == rec.plan.cycle_length_s);
  CHECK(names[22] == "barrier_s");
  CHECK(f[22] == rec.plan.barrier_time_s);
  for (int p = 1; p <= 8; ++p) {
    CHECK(names[22 + p] == "green_frac_p" + std::to_string(p));
    CHECK(f[22 + p] == rec.plan.phase(p).green_s / rec.plan.cycle_length_s);
  }
}

TEST_CASE("the end to end surrogate ties responses to the model") {
  std::vector<SimulationRecord> recs;
  auto graphs = make_exit_graphs(6, 73, {"full"}, &recs);
  TwinModel<float> model;
  model.init(tiny_config(), 26);
  LinearExplanation ex = explain_linear(model, recs, graphs);
  REQUIRE(ex.response.size() == recs.size());
  REQUIRE(ex.coef.size() == 31);
  CHECK(ex.feature_names == scenario_feature_names());
  for (std::size_t i = 0; i < recs.size(); ++i)
    CHECK(ex.response[i] == doctest::Approx(mean_predicted_magnitude(model, graphs[i]))
                                .epsilon(1e-12));
  // Six samples cannot pin down 31 coefficients without the ridge path.
  CHECK(ex.ridge_fallback);
}

}
