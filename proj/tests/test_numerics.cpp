#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <memory>

#include "mapclip/gradcheck.hpp"
#include "mapclip/graph.hpp"
#include "mapclip/nn.hpp"
#include "mapclip/rng.hpp"
#include "mapclip/tensor.hpp"

using namespace mapclip;
using namespace mapclip::numerics;

namespace {

Tensor<double> random_tensor(Shape s, SeededStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Finite-difference check of an op applied to k parameter tensors, reduced
// to a scalar through a fixed random projection.
void check_op(const std::string& label, std::vector<Shape> in_shapes,
              std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)> op,
              double lo = -1.0, double hi = 1.0, double tol = 2e-6) {
  SeededStream rng(1234, "gradcheck/" + label);
  std::vector<std::shared_ptr<Parameter<double>>> params;
  for (size_t i = 0; i < in_shapes.size(); ++i)
    params.push_back(std::make_shared<Parameter<double>>(
        label + "/" + std::to_string(i), random_tensor(in_shapes[i], rng, lo, hi)));
  Tensor<double> proj;
  auto build = [&](Graph<double>& g) {
    std::vector<Var<double>> xs;
    for (auto& p : params) xs.push_back(g.param(*p));
    Var<double> y = op(g, xs);
    if (proj.data.empty()) proj = random_tensor(y.val().shape, rng);
    return sum_all(mul(y, g.input(proj)));
  };
  SeededStream pick(99, "pick/" + label);
  auto report = finite_diff_check<double>(build, params, 1.0, 1e-6, tol, pick);
  INFO("op ", label, " worst rel err ",
       (report.worst() ? report.worst()->rel_err : 0.0));
  CHECK(report.all_pass);
}

}  // namespace

TEST_CASE("seeded streams are deterministic and name-separated") {
  SeededStream a1(42, "alpha"), a2(42, "alpha"), b(42, "beta"), c(7, "alpha");
  for (int i = 0; i < 100; ++i) CHECK(a1.next_u64() == a2.next_u64());
  bool differs_name = false, differs_seed = false;
  SeededStream a3(42, "alpha");
  for (int i = 0; i < 8; ++i) {
    const uint64_t va = a3.next_u64();
    if (va != b.next_u64()) differs_name = true;
    SeededStream c2(7, "alpha");
    if (va != c.next_u64()) differs_seed = true;
  }
  CHECK(differs_name);
  CHECK(differs_seed);
}

TEST_CASE("seeded stream reference vector is pinned") {
  // First 8 draws of (seed=42, "alpha"); frozen so any cross-platform or
  // refactoring drift is caught.
  const uint64_t expected[8] = {
      3822407260912351398ull,  708528914022544564ull,  2408593504921476900ull,
      14941350641793428420ull, 4426266862810389059ull, 16761189283218206495ull,
      9852645988732797718ull,  11260764171809566409ull,
  };
  SeededStream s(42, "alpha");
  for (int i = 0; i < 8; ++i) CHECK(s.next_u64() == expected[i]);
}

TEST_CASE("uniform int is in range and hits endpoints") {
  SeededStream s(1, "ints");
  bool lo = false, hi = false;
  for (int i = 0; i < 1000; ++i) {
    const int64_t v = s.uniform_int(2, 5);
    CHECK(v >= 2);
    CHECK(v <= 5);
    lo = lo || v == 2;
    hi = hi || v == 5;
  }
  CHECK(lo);
  CHECK(hi);
}

TEST_CASE("quadratic toy loss gradient is near machine precision") {
  SeededStream rng(5, "quad");
  auto p = std::make_shared<Parameter<double>>("theta", random_tensor({6}, rng));
  auto build = [&](Graph<double>& g) {
    Var<double> x = g.param(*p);
    return mean_all(vsquare(x));
  };
  SeededStream pick(6, "quadpick");
  auto report = finite_diff_check<double>(build, {p}, 1.0, 1e-6, 1e-3, pick);
  CHECK(report.all_pass);
  CHECK(report.max_rel_err <= 1e-9);
}

TEST_CASE("deliberately corrupted backward fails the check") {
  SeededStream rng(5, "bad");
  auto p = std::make_shared<Parameter<double>>("theta", random_tensor({4}, rng));
  // Scale op whose backward uses the wrong constant.
  auto bad_scale = [](Var<double> x, double c) {
    Graph<double>* g = x.g;
    Tensor<double> out = Tensor<double>::zeros(x.val().shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = c * x.val().data[i];
    int px = x.id;
    const double wrong = c + 0.5;
    return g->make(std::move(out), g->needs_grad(px), [g, px, wrong](const Tensor<double>& gy) {
      Tensor<double>& gx = g->gbuf(px);
      for (int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += wrong * gy.data[i];
    });
  };
  auto build = [&](Graph<double>& g) { return sum_all(bad_scale(g.param(*p), 2.0)); };
  SeededStream pick(6, "badpick");
  auto report = finite_diff_check<double>(build, {p}, 1.0, 1e-6, 1e-3, pick);
  CHECK_FALSE(report.all_pass);
}

TEST_CASE("elementwise and shape op gradients match finite differences") {
  using V = std::vector<Var<double>>;
  check_op("add", {{3, 4}, {3, 4}}, [](Graph<double>&, V& x) { return add(x[0], x[1]); });
  check_op("sub", {{3, 4}, {3, 4}}, [](Graph<double>&, V& x) { return sub(x[0], x[1]); });
  check_op("mul", {{3, 4}, {3, 4}}, [](Graph<double>&, V& x) { return mul(x[0], x[1]); });
  check_op("add_bcast", {{2, 3, 4}, {3, 4}}, [](Graph<double>&, V& x) { return add_bcast(x[0], x[1]); });
  check_op("mul_bcast", {{2, 3, 4}, {4}}, [](Graph<double>&, V& x) { return mul_bcast(x[0], x[1]); });
  check_op("mul_colvec", {{5, 3}, {5}}, [](Graph<double>&, V& x) { return mul_colvec(x[0], x[1]); });
  check_op("vdiv", {{3, 4}, {3, 4}}, [](Graph<double>&, V& x) { return vdiv(x[0], x[1]); }, 0.5, 2.0);
  check_op("neg", {{7}}, [](Graph<double>&, V& x) { return neg(x[0]); });
  check_op("scale", {{7}}, [](Graph<double>&, V& x) { return scale(x[0], 3.25); });
  check_op("add_const", {{7}}, [](Graph<double>&, V& x) { return add_const(x[0], -1.5); });
  check_op("relu", {{40}}, [](Graph<double>&, V& x) { return relu(x[0]); });
  check_op("sigmoid", {{9}}, [](Graph<double>&, V& x) { return sigmoid(x[0]); }, -3.0, 3.0);
  check_op("vexp", {{9}}, [](Graph<double>&, V& x) { return vexp(x[0]); });
  check_op("vlog", {{9}}, [](Graph<double>&, V& x) { return vlog(x[0]); }, 0.2, 3.0);
  check_op("vabs", {{9}}, [](Graph<double>&, V& x) { return vabs(x[0]); }, 0.2, 1.0);
  check_op("vsqrt", {{9}}, [](Graph<double>&, V& x) { return vsqrt(x[0]); }, 0.2, 3.0);
  check_op("vsquare", {{9}}, [](Graph<double>&, V& x) { return vsquare(x[0]); });
  check_op("vrecip", {{9}}, [](Graph<double>&, V& x) { return vrecip(x[0]); }, 0.5, 2.0);
  check_op("clamp", {{9}}, [](Graph<double>&, V& x) { return clamp(x[0], -0.8, 0.8); });
  check_op("reshape", {{3, 4}}, [](Graph<double>&, V& x) { return reshape(x[0], {2, 6}); });
  check_op("transpose2d", {{3, 4}}, [](Graph<double>&, V& x) { return transpose2d(x[0]); });
  check_op("slice_rows", {{5, 3}}, [](Graph<double>&, V& x) { return slice_rows(x[0], 1, 3); });
  check_op("slice_cols", {{3, 6}}, [](Graph<double>&, V& x) { return slice_cols(x[0], 2, 3); });
  check_op("concat_rows", {{2, 3}, {4, 3}}, [](Graph<double>&, V& x) {
    return concat_rows(std::vector<Var<double>>{x[0], x[1]});
  });
  check_op("concat_cols", {{3, 2}, {3, 5}}, [](Graph<double>&, V& x) {
    return concat_cols(std::vector<Var<double>>{x[0], x[1]});
  });
}

TEST_CASE("reduction, product and normalization op gradients") {
  using V = std::vector<Var<double>>;
  check_op("matmul", {{3, 4}, {4, 5}}, [](Graph<double>&, V& x) { return matmul(x[0], x[1]); });
  check_op("rowsum", {{4, 6}}, [](Graph<double>&, V& x) { return rowsum(x[0]); });
  check_op("sum_all", {{4, 6}}, [](Graph<double>&, V& x) { return sum_all(x[0]); });
  check_op("mean_all", {{4, 6}}, [](Graph<double>&, V& x) { return mean_all(x[0]); });
  check_op("mean_middle", {{3, 4, 5}}, [](Graph<double>&, V& x) { return mean_middle(x[0]); });
  check_op("expand_middle", {{3, 5}}, [](Graph<double>&, V& x) { return expand_middle(x[0], 4); });
  check_op("softmax_rows", {{4, 7}}, [](Graph<double>&, V& x) { return softmax_rows(x[0]); }, -2.0, 2.0);
  check_op("layernorm", {{5, 8}, {8}, {8}},
           [](Graph<double>&, V& x) { return layernorm(x[0], x[1], x[2]); });
  check_op("conv3x3", {{5, 6, 3}, {27, 4}, {4}},
           [](Graph<double>&, V& x) { return conv3x3(x[0], x[1], x[2]); });
  check_op("bilinear", {{5, 6, 3}, {7, 2}},
           [](Graph<double>&, V& x) {
             // keep coordinates strictly inside the grid
             Var<double> c = clamp(x[1], 0.3, 3.7);
             return bilinear(x[0], c);
           },
           0.31, 3.69);
  check_op("bce", {{4, 5}}, [](Graph<double>&, V& x) {
    Tensor<double> target = Tensor<double>::zeros({4, 5});
    for (int64_t i = 0; i < target.numel(); ++i) target.data[i] = (i % 3 == 0) ? 1.0 : 0.0;
    return bce_with_logits_mean(x[0], target);
  });
}

TEST_CASE("softmax rows are probability vectors up to |logit| = 50") {
  SeededStream rng(77, "softmax");
  for (double scl : {0.1, 1.0, 10.0, 50.0}) {
    Graph<double> g;
    Tensor<double> t = random_tensor({6, 9}, rng, -1.0, 1.0);
    for (auto& v : t.data) v *= scl;
    Var<double> p = softmax_rows(g.input(std::move(t)));
    for (int64_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < 9; ++j) {
        const double w = p.val().data[i * 9 + j];
        CHECK(w >= 0.0);
        s += w;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("bilinear sampling identities") {
  Graph<double> g;
  SeededStream rng(3, "bilinear");
  Tensor<double> feat = random_tensor({4, 5, 2}, rng);
  Var<double> f = g.input(feat);

  SUBCASE("exact cell centers reproduce the cell value") {
    Tensor<double> coords({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Var<double> out = bilinear(f, g.input(coords));
    for (int k = 0; k < 2; ++k) {
      CHECK(out.val().data[0 * 2 + k] == doctest::Approx(feat.data[(1 * 5 + 2) * 2 + k]));
      CHECK(out.val().data[1 * 2 + k] == doctest::Approx(feat.data[(3 * 5 + 4) * 2 + k]));
    }
  }

  SUBCASE("midpoint of four cells equals their mean") {
    Tensor<double> coords({1, 2}, {1.5, 2.5});
    Var<double> out = bilinear(f, g.input(coords));
    for (int k = 0; k < 2; ++k) {
      const double mean = 0.25 * (feat.data[(1 * 5 + 2) * 2 + k] + feat.data[(1 * 5 + 3) * 2 + k] +
                                  feat.data[(2 * 5 + 2) * 2 + k] + feat.data[(2 * 5 + 3) * 2 + k]);
      CHECK(out.val().data[k] == doctest::Approx(mean));
    }
  }

  SUBCASE("exact on affine fields") {
    Tensor<double> affine = Tensor<double>::zeros({6, 7, 1});
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 7; ++c) affine.data[(r * 7 + c)] = 0.3 + 1.7 * r - 0.9 * c;
    Var<double> fa = g.input(affine);
    for (int i = 0; i < 20; ++i) {
      const double r = rng.uniform(0.0, 5.0);
      const double c = rng.uniform(0.0, 6.0);
      Tensor<double> coords({1, 2}, {r, c});
      Var<double> out = bilinear(fa, g.input(coords));
      CHECK(out.val().data[0] == doctest::Approx(0.3 + 1.7 * r - 0.9 * c).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv3x3 matches a direct oracle") {
  SeededStream rng(11, "conv");
  const int h = 5, w = 4, cin = 3, cout = 2;
  Tensor<double> x = random_tensor({h, w, cin}, rng);
  Tensor<double> wt = random_tensor({9 * cin, cout}, rng);
  Tensor<double> b = random_tensor({cout}, rng);
  Graph<double> g;
  Var<double> y = conv3x3(g.input(x), g.input(wt), g.input(b));
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int oc = 0; oc < cout; ++oc) {
        double acc = b.data[oc];
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const int sr = r + dy, sc = c + dx;
            if (sr < 0 || sr >= h || sc < 0 || sc >= w) continue;
            for (int ic = 0; ic < cin; ++ic)
              acc += x.data[(sr * w + sc) * cin + ic] * wt.data[(k * cin + ic) * cout + oc];
          }
        CHECK(y.val().data[(r * w + c) * cout + oc] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("repeated backward calls accumulate parameter gradients") {
  auto p = std::make_shared<Parameter<double>>("p", Tensor<double>({2}, {1.0, 2.0}));
  Graph<double> g;
  Var<double> loss = sum_all(vsquare(g.param(*p)));
  g.backward(loss);
  const double g0 = p->grad.data[0];
  g.backward(loss);
  CHECK(p->grad.data[0] == doctest::Approx(2.0 * g0));
}

TEST_CASE("frozen parameters receive zero gradient") {
  auto p = std::make_shared<Parameter<double>>("p", Tensor<double>({2}, {1.0, 2.0}));
  p->requires_grad = false;
  auto q = std::make_shared<Parameter<double>>("q", Tensor<double>({2}, {3.0, 4.0}));
  Graph<double> g;
  Var<double> loss = sum_all(mul(g.param(*p), g.param(*q)));
  g.backward(loss);
  CHECK(p->grad.data[0] == 0.0);
  CHECK(p->grad.data[1] == 0.0);
  CHECK(q->grad.data[0] == doctest::Approx(1.0));
}

TEST_CASE("adamw reduces a quadratic loss") {
  nn::ParamSet<double> ps(9);
  auto p = ps.add("theta", Tensor<double>({3}, {1.0, -2.0, 3.0}));
  nn::AdamW<double> opt;
  opt.lr = 0.05;
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    ps.zero_grads();
    Graph<double> g;
    Var<double> loss = sum_all(vsquare(g.param(*p)));
    if (it == 0) first = loss.val().data[0];
    last = loss.val().data[0];
    g.backward(loss);
    opt.step(ps);
  }
  CHECK(last < 0.01 * first);
}

TEST_CASE("dropout scales surviving entries and is off at p=0") {
  SeededStream rng(123, "dropout");
  Graph<double> g;
  Tensor<double> ones = Tensor<double>::full({10000}, 1.0);
  Var<double> x = g.input(ones);
  Var<double> same = nn::dropout(g, x, 0.0, &rng);
  CHECK(same.id == x.id);
  Var<double> dropped = nn::dropout(g, x, 0.2, &rng);
  double mean = 0.0;
  int zeros = 0;
  for (double v : dropped.val().data) {
    mean += v;
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.0 / 0.8));
  }
  mean /= 10000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
  CHECK(zeros > 1500);
  CHECK(zeros < 2500);
}

TEST_CASE("sinusoid positional encoding is a pure function of shape") {
  auto a = nn::sinusoid_3d<double>(2, 3, 4, 16);
  auto b = nn::sinusoid_3d<double>(2, 3, 4, 16);
  CHECK(a.shape == Shape{24, 16});
  CHECK(a.data == b.data);
  for (double v : a.data) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}
