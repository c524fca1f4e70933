#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>

#include "mapclip/gradcheck.hpp"
#include "mapclip/pipeline.hpp"

using namespace mapclip;
using namespace mapclip::numerics;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.C = 16;
  c.T = 3;
  c.S = 2;
  c.L = 2;
  c.M = 5;
  c.Nc = 4;
  c.Ni = 3;
  c.Np = 4;
  c.heads = 2;
  c.ffn_mult = 2;
  c.dec_layers = 1;
  c.deform_points = 2;
  c.dropout_p = 0.0;
  c.grid.h = 6;
  c.grid.w = 8;
  c.grid.x_extent = 8.0;
  c.grid.y_extent = 6.0;
  return c;
}

Tensor<float> random_obs(const ModelConfig& cfg, uint64_t seed) {
  SeededStream rng(seed, "obs");
  Tensor<float> t = Tensor<float>::zeros({cfg.grid.h, cfg.grid.w, synthworld::kObsChannels});
  for (auto& v : t.data) v = static_cast<float>(rng.bernoulli(0.3) ? 1.0 : 0.0);
  return t;
}

Tensor<double> random_tensor(Shape s, uint64_t seed, const char* name) {
  SeededStream rng(seed, name);
  Tensor<double> t = Tensor<double>::zeros(std::move(s));
  for (auto& v : t.data) v = rng.normal();
  return t;
}

// Zero every output projection of the unveiler stack (attention out
// projections, feed-forward second layers, deformable out projections).
template <typename R>
void zero_unveiler_outputs(nn::ParamSet<R>& ps) {
  for (const auto& p : ps.items()) {
    if (p->name.rfind("unveiler.", 0) != 0) continue;
    const bool out_proj = p->name.find(".attn.wo.") != std::string::npos ||
                          p->name.find(".ffn.fc2.") != std::string::npos ||
                          p->name.find(".deform.out.") != std::string::npos ||
                          p->name.find(".inst_attn.wo.") != std::string::npos ||
                          p->name.find(".point_attn.wo.") != std::string::npos;
    if (out_proj) std::fill(p->value.data.begin(), p->value.data.end(), R(0));
  }
}

struct TinyModel {
  ModelConfig cfg = tiny_config();
  AblationConfig abl;
  pipeline::Model<double> model;
  TinyModel(bool inter = false) : model((abl.inter_clip = inter, cfg), abl, 17) {}
};

unveiler::ClipInputs<double> make_clip_inputs(pipeline::Model<double>& m, Graph<double>& g,
                                              int t_frames, uint64_t seed) {
  unveiler::ClipInputs<double> in;
  for (int t = 0; t < t_frames; ++t) {
    auto fv = pipeline::run_framenet(g, m, synthworld::FrameObservation{{}, random_obs(m.cfg, seed + t), {}, {}, 0.0}, DropoutCtx{});
    in.bev.push_back(fv.bev);
    in.queries.push_back(fv.decode.queries);
    in.point_logits.push_back(fv.decode.point_logits);
  }
  return in;
}

}  // namespace

TEST_CASE("residual identity: zeroed output projections pass the seed through") {
  TinyModel tm;
  zero_unveiler_outputs(tm.model.params);
  Graph<double> g;
  Tensor<double> seed = random_tensor({tm.cfg.Nc, tm.cfg.C}, 3, "seed");
  Tensor<double> kv = random_tensor({tm.cfg.clip_query_tokens(), tm.cfg.C}, 4, "kv");
  Tensor<double> kv_pos = random_tensor({tm.cfg.clip_query_tokens(), tm.cfg.C}, 5, "kvpos");
  Var<double> out = tm.model.unv->clip_token_generator(g, 0, g.input(seed), g.input(kv),
                                                       g.input(kv_pos), DropoutCtx{});
  CHECK(out.val().data == seed.data);

  // BEV updater likewise returns its input bit-exactly.
  std::vector<Var<double>> bev;
  for (int t = 0; t < 2; ++t)
    bev.push_back(g.input(random_tensor({tm.cfg.grid.h, tm.cfg.grid.w, tm.cfg.C}, 10 + t, "bev")));
  auto updated = tm.model.unv->bev_updater(g, 0, bev, g.input(seed), DropoutCtx{});
  REQUIRE(updated.size() == 2);
  for (int t = 0; t < 2; ++t) CHECK(updated[t].val().data == bev[t].val().data);
}

TEST_CASE("identity composition: clip predictions equal frame predictions exactly") {
  TinyModel tm;
  zero_unveiler_outputs(tm.model.params);
  Graph<double> g;
  auto in = make_clip_inputs(tm.model, g, tm.cfg.T, 100);

  // Reference frame predictions from the shared heads on the raw queries.
  std::vector<framenet::FramePrediction<double>> frame_preds;
  for (int t = 0; t < tm.cfg.T; ++t)
    frame_preds.push_back(framenet::predict_from_tokens(g, tm.model.net->heads, in.queries[t],
                                                        std::nullopt, tm.cfg.Ni, tm.cfg.Np));

  auto out = tm.model.unv->forward(g, in, std::nullopt, DropoutCtx{});
  REQUIRE(static_cast<int>(out.layers.size()) == tm.cfg.L);
  for (const auto& layer : out.layers) {
    for (int t = 0; t < tm.cfg.T; ++t) {
      CHECK(layer.map_tokens[t].val().data == in.queries[t].val().data);
      CHECK(layer.preds[t].points.val().data == frame_preds[t].points.val().data);
      CHECK(layer.preds[t].cls_logits.val().data == frame_preds[t].cls_logits.val().data);
    }
  }
}

TEST_CASE("clip generator output shapes and kv permutation invariance without positions") {
  TinyModel tm;
  Graph<double> g;
  const int n_kv = tm.cfg.clip_query_tokens();
  Tensor<double> seed = random_tensor({tm.cfg.Nc, tm.cfg.C}, 1, "seed");
  Tensor<double> kv = random_tensor({n_kv, tm.cfg.C}, 2, "kv");
  Tensor<double> zeros_pos = Tensor<double>::zeros({n_kv, tm.cfg.C});

  Var<double> out1 = tm.model.unv->clip_token_generator(g, 0, g.input(seed), g.input(kv),
                                                        g.input(zeros_pos), DropoutCtx{});
  CHECK(out1.val().shape == Shape{tm.cfg.Nc, tm.cfg.C});

  // Reverse the kv token order.
  Tensor<double> kv_perm = kv;
  for (int i = 0; i < n_kv; ++i)
    for (int c = 0; c < tm.cfg.C; ++c)
      kv_perm.data[static_cast<size_t>(i) * tm.cfg.C + c] =
          kv.data[static_cast<size_t>(n_kv - 1 - i) * tm.cfg.C + c];
  Var<double> out2 = tm.model.unv->clip_token_generator(g, 0, g.input(seed), g.input(kv_perm),
                                                        g.input(zeros_pos), DropoutCtx{});
  for (int64_t i = 0; i < out1.val().numel(); ++i)
    CHECK(out1.val().data[i] == doctest::Approx(out2.val().data[i]).epsilon(1e-6));
}

TEST_CASE("single kv token: attention output equals its value projection everywhere") {
  nn::ParamSet<double> ps(5);
  nn::MultiHeadAttention<double> mha(ps, "mha", 8, 2, "probe");
  Graph<double> g;
  Tensor<double> q = random_tensor({5, 8}, 1, "q");
  Tensor<double> kv = random_tensor({1, 8}, 2, "kv");
  Var<double> out = mha(g, g.input(q), g.input(kv), g.input(kv));

  // Closed form: softmax over one key is 1, so out = (kv Wv + bv) Wo + bo.
  std::vector<double> vproj(8, 0.0);
  for (int j = 0; j < 8; ++j) {
    double s = mha.wv.b->value.data[j];
    for (int k = 0; k < 8; ++k) s += kv.data[k] * mha.wv.w->value.data[k * 8 + j];
    vproj[j] = s;
  }
  std::vector<double> expect(8, 0.0);
  for (int j = 0; j < 8; ++j) {
    double s = mha.wo.b->value.data[j];
    for (int k = 0; k < 8; ++k) s += vproj[k] * mha.wo.w->value.data[k * 8 + j];
    expect[j] = s;
  }
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(out.val().data[i * 8 + j] == doctest::Approx(expect[j]).epsilon(1e-10));
}

TEST_CASE("bev updater: score array is (T*H*W) x Nc and cost scales linearly in T") {
  TinyModel tm;
  Graph<double> g;
  std::vector<Var<double>> bev;
  for (int t = 0; t < tm.cfg.T; ++t)
    bev.push_back(g.input(random_tensor({tm.cfg.grid.h, tm.cfg.grid.w, tm.cfg.C}, 40 + t, "b")));
  Var<double> clip = g.input(random_tensor({tm.cfg.Nc, tm.cfg.C}, 50, "c"));
  nn::attn_stats_reset();
  auto updated = tm.model.unv->bev_updater(g, 0, bev, clip, DropoutCtx{});
  const auto& st = nn::attn_stats().at("bev_updater");
  CHECK(st.score_rows == static_cast<int64_t>(tm.cfg.T) * tm.cfg.grid.h * tm.cfg.grid.w);
  CHECK(st.score_cols == tm.cfg.Nc);
  CHECK(st.heads == tm.cfg.heads);
  for (const auto& u : updated) CHECK(u.val().shape == Shape{tm.cfg.grid.h, tm.cfg.grid.w, tm.cfg.C});

  // Wall-time linearity in T (the decoupling claim): compare T vs 2T on a
  // larger grid; the ratio must be ~2 within 25%.
  ModelConfig big = tiny_config();
  big.grid.h = 32;
  big.grid.w = 64;
  big.C = 32;
  big.T = 8;
  AblationConfig abl;
  pipeline::Model<double> bm(big, abl, 3);
  auto time_updater = [&](int frames) {
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      Graph<double> gg;
      gg.set_recording(false);
      std::vector<Var<double>> bb;
      for (int t = 0; t < frames; ++t)
        bb.push_back(gg.input(random_tensor({big.grid.h, big.grid.w, big.C}, 60 + t, "b")));
      Var<double> cc = gg.input(random_tensor({big.Nc, big.C}, 70, "c"));
      const auto start = std::chrono::steady_clock::now();
      bm.unv->bev_updater(gg, 0, bb, cc, DropoutCtx{});
      const auto stop = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(stop - start).count());
    }
    return best;
  };
  time_updater(4);  // warm up
  const double t1 = time_updater(4);
  const double t2 = time_updater(8);
  const double ratio = t2 / t1;
  MESSAGE("bev updater time ratio 2T/T = ", ratio);
  CHECK(ratio >= 1.5);
  CHECK(ratio <= 2.5);
}

TEST_CASE("clip token size is independent of the clip length") {
  TinyModel tm;
  for (int frames : {2, 3}) {
    Graph<double> g;
    auto in = make_clip_inputs(tm.model, g, frames, 200 + frames);
    auto out = tm.model.unv->forward(g, in, std::nullopt, DropoutCtx{});
    CHECK(out.clip_tokens().val().shape == Shape{tm.cfg.Nc, tm.cfg.C});
    CHECK(static_cast<int>(out.layers.size()) == tm.cfg.L);
    for (const auto& layer : out.layers) {
      CHECK(static_cast<int>(layer.preds.size()) == frames);
      CHECK(static_cast<int>(layer.seg_logits.size()) == frames);
    }
  }
}

TEST_CASE("attention rows are convex combinations everywhere in the stack") {
  TinyModel tm;
  Graph<double> g;
  Tensor<double> logits = random_tensor({7, 9}, 5, "logits");
  for (auto& v : logits.data) v *= 20.0;
  Var<double> p = softmax_rows(g.input(logits));
  for (int i = 0; i < 7; ++i) {
    double s = 0.0;
    for (int j = 0; j < 9; ++j) {
      CHECK(p.val().data[i * 9 + j] >= 0.0);
      s += p.val().data[i * 9 + j];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("intra-clip forward gradients match finite differences (64-bit)") {
  TinyModel tm;
  auto& cfg = tm.cfg;
  SeededStream prng(8, "proj");
  Tensor<double> proj_pts = Tensor<double>::zeros({cfg.Ni * cfg.Np, 2});
  for (auto& v : proj_pts.data) v = prng.normal();
  Tensor<double> proj_clip = Tensor<double>::zeros({cfg.Nc, cfg.C});
  for (auto& v : proj_clip.data) v = prng.normal();

  std::vector<Tensor<float>> obs;
  for (int t = 0; t < 2; ++t) obs.push_back(random_obs(cfg, 300 + t));

  auto build = [&](Graph<double>& g) {
    unveiler::ClipInputs<double> in;
    for (int t = 0; t < 2; ++t) {
      synthworld::FrameObservation fo;
      fo.observation = obs[static_cast<size_t>(t)];
      auto fv = pipeline::run_framenet(g, tm.model, fo, DropoutCtx{});
      in.bev.push_back(fv.bev);
      in.queries.push_back(fv.decode.queries);
      in.point_logits.push_back(fv.decode.point_logits);
    }
    auto out = tm.model.unv->forward(g, in, std::nullopt, DropoutCtx{});
    Var<double> loss = sum_all(mul(out.clip_tokens(), g.input(proj_clip)));
    for (const auto& layer : out.layers)
      for (const auto& pred : layer.preds)
        loss = add(loss, sum_all(mul(pred.points, g.input(proj_pts))));
    return loss;
  };
  SeededStream pick(4, "pick");
  auto report = finite_diff_check<double>(build, tm.model.params.items(), 0.0, 1e-5, 1e-3, pick, 1);
  const auto* worst = report.worst();
  INFO("worst: ", worst ? worst->param : "none", " rel err ", worst ? worst->rel_err : 0.0);
  CHECK(report.all_pass);
}
