#include "looptwin/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>

#include "looptwin/mpnn.hpp"
#include "looptwin/ndiff.hpp"
#include "looptwin/rng.hpp"

namespace looptwin {

namespace {

using D = double;
using RefD = Ref<D>;

struct Case {
  std::string name;
  std::vector<RefD> leaves;
  std::function<RefD(Tape<D>&)> build;
};

RefD grad_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  RefD t = make_tensor<D>(std::move(shape), true);
  for (auto& v : t->v) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kinked nonlinearities.
RefD grad_leaf_offzero(Shape shape, Rng& rng) {
  RefD t = make_tensor<D>(std::move(shape), true);
  for (auto& v : t->v) {
    double m = rng.uniform(0.2, 1.5);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

RefD const_leaf(Shape shape, Rng& rng) {
  RefD t = make_tensor<D>(std::move(shape), false);
  for (auto& v : t->v) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Scalar projection <out, c> with a fixed random functional c.
RefD lin(Tape<D>& tape, const RefD& out, const RefD& c) {
  const int n = static_cast<int>(out->numel());
  return tape.reshape(tape.matmul(tape.reshape(out, {1, n}), c), {1});
}

// 5-node, 7-edge test graph; nodes 0..2 have no in-edges.
GraphStructure small_graph() {
  return GraphStructure::build({{0, 3}, {1, 3}, {2, 3}, {0, 4}, {1, 4}, {2, 4}, {3, 4}}, 5);
}

double run_case(Case& c, double step, std::size_t* checked) {
  for (auto& l : c.leaves) l->zero_grad();
  Tape<D> tape;
  RefD loss = c.build(tape);
  tape.backward(loss);
  std::vector<std::vector<D>> analytic;
  for (auto& l : c.leaves) analytic.push_back(l->g);

  auto eval = [&]() {
    Tape<D> t2;
    return c.build(t2)->v[0];
  };

  double worst = 0.0;
  for (std::size_t li = 0; li < c.leaves.size(); ++li) {
    auto& l = c.leaves[li];
    for (std::size_t i = 0; i < l->numel(); ++i) {
      const double keep = l->v[i];
      l->v[i] = keep + step;
      const double fp = eval();
      l->v[i] = keep - step;
      const double fm = eval();
      l->v[i] = keep;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[li][i];
      const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
      ++*checked;
    }
  }
  return worst;
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed, double step) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  std::vector<Case> cases;

  {
    auto a = grad_leaf({3, 4}, rng), b = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"add", {a, b}, [=](Tape<D>& t) { return lin(t, t.add(a, b), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng), b = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"sub", {a, b}, [=](Tape<D>& t) { return lin(t, t.sub(a, b), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng), b = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"mul", {a, b}, [=](Tape<D>& t) { return lin(t, t.mul(a, b), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"scale", {a}, [=](Tape<D>& t) { return lin(t, t.scale(a, -1.7), c); }});
  }
  {
    auto a = grad_leaf_offzero({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"relu", {a}, [=](Tape<D>& t) { return lin(t, t.relu(a), c); }});
  }
  {
    auto a = grad_leaf_offzero({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back(
        {"leaky_relu", {a}, [=](Tape<D>& t) { return lin(t, t.leaky_relu(a, 0.2), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back(
        {"reshape", {a}, [=](Tape<D>& t) { return lin(t, t.reshape(a, {2, 6}), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"transpose", {a}, [=](Tape<D>& t) { return lin(t, t.transpose(a), c); }});
  }
  {
    auto a = grad_leaf({3, 5}, rng);
    auto c = const_leaf({9, 1}, rng);
    cases.push_back(
        {"slice_cols", {a}, [=](Tape<D>& t) { return lin(t, t.slice_cols(a, 1, 4), c); }});
  }
  {
    auto a = grad_leaf({3, 2}, rng), b = grad_leaf({3, 3}, rng), d = grad_leaf({3, 1}, rng);
    auto c = const_leaf({18, 1}, rng);
    cases.push_back({"concat_last",
                     {a, b, d},
                     [=](Tape<D>& t) { return lin(t, t.concat_last({a, b, d}), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng), b = grad_leaf({4, 2}, rng);
    auto c = const_leaf({6, 1}, rng);
    cases.push_back({"matmul", {a, b}, [=](Tape<D>& t) { return lin(t, t.matmul(a, b), c); }});
  }
  {
    auto a = grad_leaf({2, 3, 4}, rng), b = grad_leaf({2, 4, 2}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back({"bmm", {a, b}, [=](Tape<D>& t) { return lin(t, t.bmm(a, b), c); }});
  }
  {
    auto a = grad_leaf({2, 3, 4}, rng), b = grad_leaf({2, 5, 4}, rng);
    auto c = const_leaf({30, 1}, rng);
    cases.push_back(
        {"bmm_trans", {a, b}, [=](Tape<D>& t) { return lin(t, t.bmm(a, b, true), c); }});
  }
  {
    auto a = grad_leaf({3, 4}, rng), b = grad_leaf({4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back(
        {"add_bias", {a, b}, [=](Tape<D>& t) { return lin(t, t.add_bias(a, b), c); }});
  }
  {
    auto a = grad_leaf({3, 5}, rng);
    auto c = const_leaf({15, 1}, rng);
    cases.push_back(
        {"softmax", {a}, [=](Tape<D>& t) { return lin(t, t.softmax_last(a), c); }});
  }
  {
    auto a = grad_leaf({2, 4, 4}, rng);
    auto c = const_leaf({32, 1}, rng);
    auto mask = std::make_shared<std::vector<D>>(causal_mask<D>(4));
    cases.push_back({"softmax_masked", {a}, [=](Tape<D>& t) {
                       return lin(t, t.softmax_last(a, mask.get()), c);
                     }});
  }
  {
    auto a = grad_leaf({7}, rng);
    auto c = const_leaf({7, 1}, rng);
    auto dst = std::make_shared<std::vector<int>>(std::vector<int>{0, 1, 1, 2, 2, 2, 0});
    cases.push_back({"edge_softmax", {a}, [=](Tape<D>& t) {
                       return lin(t, t.edge_softmax(a, *dst, 4), c);
                     }});
  }
  {
    auto a = grad_leaf({4, 3}, rng);
    auto c = const_leaf({15, 1}, rng);
    auto idx = std::make_shared<std::vector<int>>(std::vector<int>{2, 0, 3, 1, 1});
    cases.push_back({"gather_rows", {a}, [=](Tape<D>& t) {
                       return lin(t, t.gather_rows(a, *idx), c);
                     }});
  }
  {
    auto a = grad_leaf({5, 3}, rng);
    auto c = const_leaf({12, 1}, rng);
    auto idx = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 2, 3, 1});
    cases.push_back({"scatter_add_rows", {a}, [=](Tape<D>& t) {
                       return lin(t, t.scatter_add_rows(a, *idx, 4), c);
                     }});
  }
  {
    auto a = grad_leaf({4, 3}, rng), s = grad_leaf({4}, rng);
    auto c = const_leaf({12, 1}, rng);
    cases.push_back(
        {"scale_rows", {a, s}, [=](Tape<D>& t) { return lin(t, t.scale_rows(a, s), c); }});
  }
  {
    auto a = grad_leaf({4, 3}, rng);
    auto c = const_leaf({12, 1}, rng);
    auto wts = std::make_shared<std::vector<D>>(std::vector<D>{0.5, -1.2, 2.0, 0.0});
    cases.push_back({"scale_rows_const", {a}, [=](Tape<D>& t) {
                       return lin(t, t.scale_rows_const(a, *wts), c);
                     }});
  }
  {
    auto a = grad_leaf({4, 5}, rng);
    auto c = const_leaf({20, 1}, rng);
    const std::uint64_t dseed = rng.next_u64();
    cases.push_back({"dropout", {a}, [=](Tape<D>& t) {
                       Rng r(dseed);
                       return lin(t, t.dropout(a, 0.3, true, &r), c);
                     }});
  }
  {
    auto a = grad_leaf({3, 4}, rng);
    auto target = std::make_shared<std::vector<D>>(12);
    auto mask = std::make_shared<std::vector<D>>(12);
    for (auto& v : *target) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < mask->size(); ++i) (*mask)[i] = i % 3 == 0 ? 0.0 : 1.0;
    cases.push_back({"mse_masked", {a}, [=](Tape<D>& t) {
                       return t.mse_masked(a, *target, *mask);
                     }});
  }

  // Layer modules. Parameters come from a throwaway tape; the build closure
  // re-runs forward with the current leaf values.
  {
    auto model = std::make_shared<Linear<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 4, 3, "lin");
    auto x = grad_leaf({5, 4}, rng);
    auto c = const_leaf({15, 1}, rng);
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"linear", leaves, [=](Tape<D>& t) {
                       return lin(t, model->forward(t, x), c);
                     }});
  }
  {
    auto model = std::make_shared<Linear<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 3, 6, "dec");
    auto x = grad_leaf({4, 3}, rng);
    auto c = const_leaf({24, 1}, rng);
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"decoder", leaves, [=](Tape<D>& t) {
                       return lin(t, t.relu(model->forward(t, x)), c);
                     }});
  }
  for (Combine comb : {Combine::Average, Combine::Concat}) {
    auto gs = std::make_shared<GraphStructure>(small_graph());
    auto model = std::make_shared<GatLayer<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 3, 2, 2, comb, 6, "gat");
    auto x = grad_leaf({5, 3}, rng);
    auto z = grad_leaf({7, 6}, rng);
    auto c = const_leaf({comb == Combine::Concat ? 20 : 10, 1}, rng);
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    leaves.push_back(z);
    cases.push_back({comb == Combine::Concat ? "gat_concat" : "gat_average", leaves,
                     [=](Tape<D>& t) { return lin(t, model->forward(t, x, *gs, z), c); }});
  }
  {
    auto gs = std::make_shared<GraphStructure>(small_graph());
    auto model = std::make_shared<GcnLayer<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 3, 2, "gcn");
    auto x = grad_leaf({5, 3}, rng);
    auto c = const_leaf({10, 1}, rng);
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"gcn", leaves, [=](Tape<D>& t) {
                       return lin(t, model->forward(t, x, *gs), c);
                     }});
  }
  {
    auto gs = std::make_shared<GraphStructure>(small_graph());
    auto model = std::make_shared<SageLayer<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 3, 2, "sage");
    auto x = grad_leaf({5, 3}, rng);
    auto c = const_leaf({10, 1}, rng);
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"sage", leaves, [=](Tape<D>& t) {
                       return lin(t, model->forward(t, x, *gs), c);
                     }});
  }
  {
    auto model = std::make_shared<TemporalSelfAttention<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 2, 3, 0.0, "sa");
    auto x = grad_leaf({2, 6}, rng);
    auto c = const_leaf({12, 1}, rng);
    auto mask = std::make_shared<std::vector<D>>(causal_mask<D>(6));
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"self_attention", leaves, [=](Tape<D>& t) {
                       return lin(t, model->forward(t, x, *mask, false, nullptr), c);
                     }});
  }
  {
    auto model = std::make_shared<TemporalSelfAttention<D>>();
    auto ps = std::make_shared<ParamSet<D>>();
    Tape<D> t0table;
    model->init(t0table, *ps, rng, 2, 3, 0.25, "sad");
    auto x = grad_leaf({2, 5}, rng);
    auto c = const_leaf({10, 1}, rng);
    auto mask = std::make_shared<std::vector<D>>(causal_mask<D>(5));
    const std::uint64_t dseed = rng.next_u64();
    std::vector<RefD> leaves = ps->list;
    leaves.push_back(x);
    cases.push_back({"self_attention_dropout", leaves, [=](Tape<D>& t) {
                       Rng r(dseed);
                       return lin(t, model->forward(t, x, *mask, true, &r), c);
                     }});
  }

  GradCheckReport report;
  for (auto& c : cases) {
    GradCheckEntry e;
    e.name = c.name;
    e.max_rel_err = run_case(c, step, &e.checked);
    report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.entries.push_back(std::move(e));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

nlohmann::json gradcheck_json(const GradCheckReport& report) {
  nlohmann::json j;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries) {
    nlohmann::json je;
    je["name"] = e.name;
    je["max_rel_err"] = e.max_rel_err;
    je["checked"] = e.checked;
    entries.push_back(je);
  }
  j["entries"] = entries;
  j["max_rel_err"] = report.max_rel_err;
  j["seconds"] = report.seconds;
  return j;
}

}  // namespace looptwin
