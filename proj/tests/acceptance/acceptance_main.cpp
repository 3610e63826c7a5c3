// Acceptance suite: runs every contract criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aalr/gradcheck.hpp"
#include "aalr/io.hpp"
#include "aalr/net.hpp"
#include "aalr/synth.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aalr;
using nlohmann::json;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct RandomInstance {
  LabelMap labels;
  DenseTensor probs;
  DenseTensor conf;
  DenseTensor embed;
};

RandomInstance random_instance(Rng& rng, std::size_t h, std::size_t w, std::size_t c,
                               std::size_t dim) {
  RandomInstance inst;
  inst.labels = detail::random_label_map(rng, h, w, static_cast<int>(c), 0.2);
  const auto pd = detail::random_prob_map(rng, h * w, c);
  inst.probs = DenseTensor({h, w, c});
  for (std::size_t i = 0; i < pd.size(); ++i) inst.probs.data[i] = static_cast<float>(pd[i]);
  inst.conf = DenseTensor({h, w});
  for (auto& v : inst.conf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  inst.embed = DenseTensor({h, w, dim});
  for (auto& v : inst.embed.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return inst;
}

// ---- criterion 1: gradient suite -------------------------------------------

void criterion_1() {
  const double t0 = now_s();
  double worst_loss = 0, worst_model = 0;
  std::size_t checked = 0;

  const KernelSet kernels{{1, 2}};
  for (std::uint64_t seed : {11ull, 12ull}) {
    for (AffinityMode mode : {AffinityMode::kSA, AffinityMode::kAA}) {
      const auto r8 = affinity_grad_check(mode, 8, 8, 3, kernels, seed);
      const auto r16 = affinity_grad_check(mode, 16, 16, 4, kernels, seed + 100);
      worst_loss = std::max({worst_loss, r8.max_rel_err, r16.max_rel_err});
      checked += r8.checked + r16.checked;
    }
    for (double gamma : {0.0, 2.0}) {
      const auto r = lr_grad_check(8, 8, 4, 3, gamma, seed);
      const auto r16 = lr_grad_check(16, 16, 6, 4, gamma, seed + 200);
      worst_loss = std::max({worst_loss, r.max_rel_err, r16.max_rel_err});
      checked += r.checked + r16.checked;
    }
    const auto rm = model_grad_check(8, 8, 3, seed);
    worst_model = std::max(worst_model, rm.max_rel_err);
    checked += rm.checked;
  }
  const double elapsed = now_s() - t0;

  std::ostringstream d;
  d << "gradient suite: losses max rel err " << worst_loss << " (tol " << kLossGradTol
    << "), model " << worst_model << " (tol " << kModelGradTol << "), " << checked
    << " coordinates, " << elapsed << " s (limit 60)";
  report(1, worst_loss < kLossGradTol && worst_model < kModelGradTol && elapsed < 60.0, d.str());
}

// ---- criterion 2: oracle equivalence ----------------------------------------

void criterion_2() {
  Rng rng(222);
  const std::vector<int> dil = {1, 2};
  double worst = 0;
  bool counts_ok = true, miou_ok = true;
  std::size_t instances = 0;

  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 4 + rng.next_below(13);
    const std::size_t w = 4 + rng.next_below(13);
    const std::size_t c = 2 + rng.next_below(3);
    const RandomInstance inst = random_instance(rng, h, w, c, 4);
    ++instances;

    AffinityConfig cfg;
    cfg.kernels = KernelSet{dil};
    const PairSet pairs = build_pairs(inst.labels, cfg.kernels);

    // pair enumeration must match the quadruple-loop enumerator exactly
    for (std::size_t k = 0; k < dil.size(); ++k) {
      const auto ref = oracle::enumerate_pairs(inst.labels, dil[k]);
      const auto& dp = pairs.per_dilation[k];
      counts_ok = counts_ok && dp.fg_pos.size() == ref.fg.size() &&
                  dp.bg_pos.size() == ref.bg.size() && dp.neg.size() == ref.neg.size();
    }

    const AffinityReport sa = sa_loss(inst.probs, pairs, cfg);
    const auto sa_ref =
        oracle::affinity(inst.probs, inst.labels, dil, cfg.margin_m, cfg.prob_floor,
                         cfg.modeling_fn, nullptr);
    worst = std::max(worst, std::abs(sa.total - sa_ref.total));

    cfg.mode = AffinityMode::kAA;
    const AffinityReport aa = aa_loss(inst.probs, inst.conf, pairs, cfg);
    const auto aa_ref =
        oracle::affinity(inst.probs, inst.labels, dil, cfg.margin_m, cfg.prob_floor,
                         cfg.modeling_fn, &inst.conf);
    worst = std::max(worst, std::abs(aa.total - aa_ref.total));

    LrConfig lr_cfg;
    lr_cfg.gamma = rng.uniform(0.0, 4.0);
    const LrReport lr = lr_loss(inst.embed, inst.labels, inst.conf, lr_cfg);
    const auto lr_ref = oracle::lr(inst.embed, inst.labels, inst.conf, lr_cfg, false);
    worst = std::max(worst, std::abs(lr.total - lr_ref.total));

    // miou against an independently generated prediction map
    LabelMap pred(h, w);
    for (auto& v : pred.labels)
      v = rng.next_double() < 0.1 ? kNeutralLabel
                                  : static_cast<std::uint8_t>(rng.next_below(c));
    const IoUReport direct = miou(pred, inst.labels, static_cast<int>(c));
    const auto miou_ref = oracle::miou(pred, inst.labels, static_cast<int>(c));
    miou_ok = miou_ok && direct.classes == miou_ref.classes && direct.mean == miou_ref.mean;
    for (std::size_t k = 0; k < direct.iou.size(); ++k)
      miou_ok = miou_ok && direct.iou[k] == miou_ref.iou[k];
  }

  std::ostringstream d;
  d << "oracle equivalence over " << instances << " instances: worst |delta| " << worst
    << " (tol 1e-10), pair counts " << (counts_ok ? "exact" : "MISMATCH") << ", miou "
    << (miou_ok ? "exact" : "MISMATCH");
  report(2, worst < 1e-10 && counts_ok && miou_ok, d.str());
}

// ---- criterion 3: degeneracy identities -------------------------------------

void criterion_3() {
  Rng rng(333);
  bool aa_sa_bit = true, lr_proto_bit = true, additive = true;

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 4 + rng.next_below(13);
    const std::size_t w = 4 + rng.next_below(13);
    const std::size_t c = 2 + rng.next_below(3);
    const RandomInstance inst = random_instance(rng, h, w, c, 4);

    AffinityConfig cfg;
    cfg.kernels = KernelSet{{1, 3}};
    const PairSet pairs = build_pairs(inst.labels, cfg.kernels);
    const AffinityReport sa = sa_loss(inst.probs, pairs, cfg);
    DenseTensor ones({h, w});
    for (auto& v : ones.data) v = 1.0f;
    cfg.mode = AffinityMode::kAA;
    const AffinityReport aa = aa_loss(inst.probs, ones, pairs, cfg);
    aa_sa_bit = aa_sa_bit && sa.total == aa.total && sa.grad_probs.data == aa.grad_probs.data;
    for (std::size_t k = 0; k < sa.per_dilation.size(); ++k)
      aa_sa_bit = aa_sa_bit && sa.per_dilation[k].fg_pos == aa.per_dilation[k].fg_pos &&
                  sa.per_dilation[k].bg_pos == aa.per_dilation[k].bg_pos &&
                  sa.per_dilation[k].neg == aa.per_dilation[k].neg;

    LrConfig lr_cfg;
    lr_cfg.gamma = 0.0;
    const LrReport lr = lr_loss(inst.embed, inst.labels, inst.conf, lr_cfg);
    const auto proto = oracle::lr(inst.embed, inst.labels, inst.conf, lr_cfg, /*alpha_one=*/true);
    lr_proto_bit = lr_proto_bit && lr.total == proto.total && lr.l_pos == proto.l_pos &&
                   lr.l_neg == proto.l_neg;
  }

  // objective additivity on live training steps
  {
    SceneSpec spec;
    spec.num_classes = 3;
    spec.classes = {1, 2};
    spec.num_shapes = 2;
    spec.height = 32;
    spec.width = 32;
    spec.seed = 5;
    const SceneInstance scene = generate(spec);
    TrainConfig cfg;
    cfg.model.num_classes = 3;
    cfg.model.hidden = 8;
    cfg.model.embed_dim = 8;
    cfg.affinity.kernels = KernelSet{{1, 2}};
    cfg.affinity.mode = AffinityMode::kAA;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.lr_loss_last_epochs = 2;
    Trainer t(cfg, TrainSample{scene.image, scene.pseudo, scene.image_labels});
    for (int e = 1; e <= 2; ++e)
      for (int s = 0; s < 3; ++s) {
        const StepMetrics m = t.step(e);
        additive = additive &&
                   std::abs(m.total - (m.cls + m.ce + cfg.lambda1 * m.aa + cfg.lambda2 * m.lr)) <=
                       1e-12;
      }
  }

  std::ostringstream d;
  d << "degeneracies: aa(conf=1)==sa " << (aa_sa_bit ? "bit-exact" : "MISMATCH")
    << ", lr(gamma=0)==alpha-1 prototype " << (lr_proto_bit ? "bit-exact" : "MISMATCH")
    << ", objective additivity " << (additive ? "<=1e-12" : "VIOLATED");
  report(3, aa_sa_bit && lr_proto_bit && additive, d.str());
}

// ---- criteria 4 and 5: refinement experiment and modeling functions ---------

SceneInstance acceptance_scene(std::uint64_t seed) {
  SceneSpec spec;
  spec.height = 64;
  spec.width = 64;
  spec.num_shapes = 3;
  spec.classes = {1, 2};
  spec.num_classes = 3;
  spec.corruption = Corruption::kAmbiguity;
  spec.flip_rate = 0.15;
  spec.neutral_band = 3;
  spec.band_keep_rate = 0.3;
  spec.seed = seed;
  return generate(spec);
}

// The paper's kernel set 4-8-12-24 is tuned to 321x321 crops; at 64x64 the
// same relative reach is {1,2,4,8} (scaled by ~1/4, smallest clamped to 1).
TrainConfig acceptance_config(std::uint64_t seed, double l1, double l2, AffinityMode mode,
                              ModelingFn fn) {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.steps_per_epoch = 20;
  cfg.learn_rate = 0.01;
  cfg.momentum = 0.9;
  cfg.lambda1 = l1;
  cfg.lambda2 = l2;
  cfg.lr_loss_last_epochs = 2;
  cfg.affinity.kernels = KernelSet{{1, 2, 4, 8}};
  cfg.affinity.mode = mode;
  cfg.affinity.modeling_fn = fn;
  cfg.affinity.margin_m = 3.0;
  cfg.lr_loss.margin_n = 1.0;
  cfg.lr_loss.gamma = 2.0;
  cfg.model.num_classes = 3;
  cfg.seed = seed;
  return cfg;
}

double train_and_refine(const SceneInstance& scene, const TrainConfig& cfg) {
  Trainer t(cfg, TrainSample{scene.image, scene.pseudo, scene.image_labels});
  for (int e = 1; e <= cfg.epochs; ++e)
    for (int s = 0; s < cfg.steps_per_epoch; ++s) t.step(e);
  return miou(refine(t.model(), scene.image), scene.gt, 3).mean;
}

void criteria_4_and_5() {
  const double t0 = now_s();
  int wins = 0;
  double delta_sum = 0;
  double mean_base = 0, mean_sa = 0, mean_max = 0, mean_min = 0, mean_plus = 0;

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SceneInstance scene = acceptance_scene(seed);
    const double base =
        train_and_refine(scene, acceptance_config(seed, 0.0, 0.0, AffinityMode::kAA, ModelingFn::kMax));
    const double full_max =
        train_and_refine(scene, acceptance_config(seed, 0.1, 0.1, AffinityMode::kAA, ModelingFn::kMax));
    const double full_sa =
        train_and_refine(scene, acceptance_config(seed, 0.1, 0.1, AffinityMode::kSA, ModelingFn::kMax));
    const double full_min =
        train_and_refine(scene, acceptance_config(seed, 0.1, 0.1, AffinityMode::kAA, ModelingFn::kMin));
    const double full_plus =
        train_and_refine(scene, acceptance_config(seed, 0.1, 0.1, AffinityMode::kAA, ModelingFn::kPlus));

    wins += full_max > base;
    delta_sum += full_max - base;
    mean_base += base;
    mean_sa += full_sa;
    mean_max += full_max;
    mean_min += full_min;
    mean_plus += full_plus;
    std::fprintf(stderr,
                 "  seed %llu: pseudo->refined base %.4f, full(aa-max) %.4f, sa %.4f, "
                 "aa-min %.4f, aa-plus %.4f\n",
                 static_cast<unsigned long long>(seed), base, full_max, full_sa, full_min,
                 full_plus);
  }
  mean_base /= 10;
  mean_sa /= 10;
  mean_max /= 10;
  mean_min /= 10;
  mean_plus /= 10;
  const double mean_delta = delta_sum / 10;
  const double elapsed = now_s() - t0;

  {
    std::ostringstream d;
    d << "refinement experiment: full(aa-max) beats ce+cls baseline on " << wins
      << "/10 seeds (need >=8), mean improvement " << mean_delta * 100 << " mIoU points (need >=2), "
      << elapsed << " s (limit 600, includes criterion 5 runs)";
    report(4, wins >= 8 && mean_delta >= 0.02 && elapsed < 600.0, d.str());
  }
  {
    std::ostringstream d;
    d << "modeling functions mean refined mIoU: sa " << mean_sa << ", max " << mean_max << ", min "
      << mean_min << ", plus " << mean_plus << "; max - sa = " << (mean_max - mean_sa) * 100
      << " points (must be > -0.5)";
    report(5, mean_max >= mean_sa - 0.005, d.str());
  }
}

// ---- criterion 6: determinism ------------------------------------------------

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args, const std::filesystem::path& out,
            const std::filesystem::path& err) {
  const std::string cmd =
      std::string(AALR_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void criterion_6() {
  testutil::TempDir tmp("aalr-acceptance");
  bool ok = true;
  std::string why;

  // scene generation twice, byte-identical outputs
  {
    std::ofstream spec(tmp.path / "spec.json");
    spec << R"({"height":48,"width":48,"num_shapes":2,"classes":[1,2],"num_classes":3,"seed":3})";
    spec.close();
    for (int i = 0; i < 2; ++i)
      if (run_cli("synth gen --spec " + (tmp.path / "spec.json").string() + " --out " +
                      (tmp.path / ("scene" + std::to_string(i))).string(),
                  tmp.path / "o.txt", tmp.path / "e.txt") != 0) {
        ok = false;
        why = "synth gen failed";
      }
    for (const char* f : {"image.dten", "gt.pgm", "pseudo.pgm", "conf.dten"})
      if (slurp(tmp.path / "scene0" / f) != slurp(tmp.path / "scene1" / f)) {
        ok = false;
        why = std::string("scene file differs: ") + f;
      }
  }

  // affinity CLI twice + threads 1 vs 4, bit-equal totals and grad bytes
  if (ok) {
    Rng rng(64);
    DenseTensor probs({48, 48, 3});
    for (std::size_t px = 0; px < 48 * 48; ++px) {
      float s = 0;
      for (int c = 0; c < 3; ++c) {
        probs.data[px * 3 + c] = 0.05f + static_cast<float>(rng.next_double());
        s += probs.data[px * 3 + c];
      }
      for (int c = 0; c < 3; ++c) probs.data[px * 3 + c] /= s;
    }
    tensor_write(probs, tmp.path / "probs.dten");
    const std::string base_cmd = "affinity-loss --probs " + (tmp.path / "probs.dten").string() +
                                 " --labels " + (tmp.path / "scene0" / "pseudo.pgm").string() +
                                 " --conf " + (tmp.path / "scene0" / "conf.dten").string() +
                                 " --mode aa --kernels 1,2,4,8 --grad-out " +
                                 (tmp.path / "grad.dten").string();
    run_cli(base_cmd + " --threads 1", tmp.path / "out1.json", tmp.path / "e.txt");
    const std::string grad1 = slurp(tmp.path / "grad.dten");
    run_cli(base_cmd + " --threads 1", tmp.path / "out2.json", tmp.path / "e.txt");
    const std::string grad2 = slurp(tmp.path / "grad.dten");
    run_cli(base_cmd + " --threads 4", tmp.path / "out4.json", tmp.path / "e.txt");
    const std::string grad4 = slurp(tmp.path / "grad.dten");

    if (slurp(tmp.path / "out1.json") != slurp(tmp.path / "out2.json") || grad1 != grad2) {
      ok = false;
      why = "repeated identical command differed";
    }
    const json j1 = json::parse(slurp(tmp.path / "out1.json"));
    const json j4 = json::parse(slurp(tmp.path / "out4.json"));
    if (j1["total"].get<double>() != j4["total"].get<double>() ||
        j1["per_dilation"] != j4["per_dilation"] || grad1 != grad4) {
      ok = false;
      why = "threads 4 diverged from threads 1";
    }
  }

  // two identical training runs, byte-identical refined maps
  if (ok) {
    std::ofstream cfg(tmp.path / "train.json");
    cfg << R"({"epochs":2,"steps_per_epoch":5,"model":{"num_classes":3,"hidden":8,"embed_dim":8},)"
        << R"("affinity":{"kernels":[1,2],"mode":"aa"},"data":")"
        << (tmp.path / "scene0").string() << R"("})";
    cfg.close();
    for (int i = 0; i < 2; ++i)
      run_cli("train --config " + (tmp.path / "train.json").string() + " --out " +
                  (tmp.path / ("run" + std::to_string(i))).string(),
              tmp.path / ("train_out" + std::to_string(i) + ".json"), tmp.path / "e.txt");
    const json t0 = json::parse(slurp(tmp.path / "train_out0.json"));
    const json t1 = json::parse(slurp(tmp.path / "train_out1.json"));
    if (slurp(tmp.path / "run0" / "refined.pgm") != slurp(tmp.path / "run1" / "refined.pgm") ||
        slurp(tmp.path / "run0" / "metrics.csv") != slurp(tmp.path / "run1" / "metrics.csv") ||
        t0["final"] != t1["final"] || t0["miou_refined"] != t1["miou_refined"]) {
      ok = false;
      why = "training runs differed";
    }
  }

  report(6, ok, ok ? "determinism: repeated commands byte-identical, threads 1 vs 4 bit-equal"
                   : "determinism: " + why);
}

// ---- criterion 7: performance floor -----------------------------------------

void criterion_7() {
  Rng rng(777);
  const std::size_t h = 321, w = 321, c = 21;
  LabelMap labels(h, w);
  for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng.next_below(c));
  const auto pd = detail::random_prob_map(rng, h * w, c);
  DenseTensor probs({h, w, c});
  for (std::size_t i = 0; i < pd.size(); ++i) probs.data[i] = static_cast<float>(pd[i]);
  DenseTensor conf({h, w});
  for (auto& v : conf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

  AffinityConfig cfg;
  cfg.kernels = KernelSet{{4, 8, 12, 24}};
  cfg.mode = AffinityMode::kAA;
  cfg.threads = 1;
  const PairSet pairs = build_pairs(labels, cfg.kernels);
  std::size_t total_pairs = 0;
  for (const auto& pc : pair_counts(pairs)) total_pairs += pc.fg_pos + pc.bg_pos + pc.neg;

  double sink = 0, best = 1e300, mean = 0;
  const int reps = 3;
  for (int it = -1; it < reps; ++it) {
    const double t0 = now_s();
    const AffinityReport r = aa_loss(probs, conf, pairs, cfg);
    const double dt = now_s() - t0;
    sink += r.total + r.grad_probs.data[0];
    if (it >= 0) {
      mean += dt;
      best = std::min(best, dt);
    }
  }
  mean /= reps;

  std::ostringstream d;
  d << "performance: 321x321x21, kernels 4-8-12-24, " << total_pairs
    << " pairs, forward+backward mean " << mean << " s/iter (limit 2), "
    << static_cast<long long>(total_pairs / mean) << " pairs/s (checksum " << sink << ")";
  report(7, mean < 2.0, d.str());
}

}  // namespace

int main() {
  std::printf("aalr acceptance suite\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criteria_4_and_5();
  criterion_6();
  criterion_7();
  if (g_failures == 0) {
    std::printf("all criteria passed\n");
    return 0;
  }
  std::printf("%d criterion(s) failed\n", g_failures);
  return 1;
}
