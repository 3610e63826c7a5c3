// aalr: affinity + label-reassign losses over probability/embedding maps,
// with a toy refinement trainer, synthetic scenes, and verification tools.
// JSON on stdout, diagnostics on stderr.
// Exit codes: 0 ok, 1 validation, 2 I/O, 3 numerical contract failure.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "aalr/gradcheck.hpp"
#include "aalr/io.hpp"
#include "aalr/net.hpp"
#include "aalr/synth.hpp"

using nlohmann::json;
using namespace aalr;

namespace {

struct ContractFailure {
  std::string what;
};

void emit(const json& report) { std::cout << report.dump() << "\n"; }

KernelSet parse_kernels(const std::string& csv) {
  KernelSet ks;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t end = csv.find(',', pos);
    if (end == std::string::npos) end = csv.size();
    const std::string tok = csv.substr(pos, end - pos);
    try {
      ks.dilations.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw validation_error("--kernels: bad dilation \"" + tok + "\"");
    }
    pos = end + 1;
  }
  ks.validate();
  return ks;
}

struct Size3 {
  std::size_t h = 0, w = 0, c = 0;
};

Size3 parse_size(const std::string& s) {
  Size3 out;
  if (std::sscanf(s.c_str(), "%zux%zux%zu", &out.h, &out.w, &out.c) != 3 || out.h == 0 ||
      out.w == 0 || out.c == 0)
    throw validation_error("--size: expected HxWxC, got \"" + s + "\"");
  return out;
}

ModelingFn parse_modeling_fn(const std::string& s) {
  if (s == "max") return ModelingFn::kMax;
  if (s == "min") return ModelingFn::kMin;
  if (s == "plus") return ModelingFn::kPlus;
  throw validation_error("--modeling-fn: expected max|min|plus, got \"" + s + "\"");
}

void check_prob_rows(const DenseTensor& probs, const std::string& flag) {
  const std::size_t c = probs.dims[2];
  const std::size_t n_px = probs.dims[0] * probs.dims[1];
  for (std::size_t i = 0; i < n_px; ++i) {
    double sum = 0;
    for (std::size_t k = 0; k < c; ++k) sum += probs.data[i * c + k];
    if (std::abs(sum - 1.0) > 1e-3)
      throw validation_error(flag + ": row " + std::to_string(i) + " sums to " +
                             std::to_string(sum) + ", not a probability map");
  }
}

json dilation_json(const AffinityReport& r, const PairSet& pairs) {
  json arr = json::array();
  for (std::size_t k = 0; k < r.per_dilation.size(); ++k) {
    const auto& t = r.per_dilation[k];
    const auto& dp = pairs.per_dilation[k];
    arr.push_back(
        {{"dilation", t.dilation},
         {"fg", t.fg_pos},
         {"bg", t.bg_pos},
         {"neg", t.neg},
         {"pairs", {{"fg", dp.fg_pos.size()}, {"bg", dp.bg_pos.size()}, {"neg", dp.neg.size()}}}});
  }
  return arr;
}

// ---- JSON config plumbing --------------------------------------------------

SceneSpec scene_from_json(const json& j) {
  SceneSpec spec;
  spec.height = j.value("height", spec.height);
  spec.width = j.value("width", spec.width);
  spec.num_shapes = j.value("num_shapes", spec.num_shapes);
  if (j.contains("classes")) spec.classes = j["classes"].get<std::vector<int>>();
  spec.num_classes = j.value("num_classes", spec.num_classes);
  const std::string corruption = j.value("corruption", "ambiguity");
  if (corruption == "ideal") {
    spec.corruption = Corruption::kIdeal;
    spec.flip_rate = 0.0;
  } else if (corruption == "ambiguity") {
    spec.corruption = Corruption::kAmbiguity;
  } else {
    throw validation_error("scene.corruption: expected ideal|ambiguity");
  }
  spec.neutral_band = j.value("neutral_band", spec.neutral_band);
  spec.band_keep_rate = j.value("band_keep_rate", spec.band_keep_rate);
  spec.flip_rate = j.value("flip_rate", spec.flip_rate);
  spec.conf_decay = j.value("conf_decay", spec.conf_decay);
  spec.conf_noise = j.value("conf_noise", spec.conf_noise);
  spec.color_noise = j.value("color_noise", spec.color_noise);
  spec.seed = j.value("seed", spec.seed);
  return spec;
}

json scene_to_json(const SceneSpec& spec) {
  return {{"height", spec.height},
          {"width", spec.width},
          {"num_shapes", spec.num_shapes},
          {"classes", spec.classes},
          {"num_classes", spec.num_classes},
          {"corruption", spec.corruption == Corruption::kIdeal ? "ideal" : "ambiguity"},
          {"neutral_band", spec.neutral_band},
          {"band_keep_rate", spec.band_keep_rate},
          {"flip_rate", spec.flip_rate},
          {"conf_decay", spec.conf_decay},
          {"conf_noise", spec.conf_noise},
          {"color_noise", spec.color_noise},
          {"seed", spec.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.steps_per_epoch = j.value("steps_per_epoch", cfg.steps_per_epoch);
  cfg.learn_rate = j.value("learn_rate", cfg.learn_rate);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.lambda1 = j.value("lambda1", cfg.lambda1);
  cfg.lambda2 = j.value("lambda2", cfg.lambda2);
  cfg.lr_loss_last_epochs = j.value("lr_loss_last_epochs", cfg.lr_loss_last_epochs);
  cfg.refresh_pairs = j.value("refresh_pairs", cfg.refresh_pairs);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("affinity")) {
    const json& a = j["affinity"];
    cfg.affinity.margin_m = a.value("margin_m", cfg.affinity.margin_m);
    if (a.contains("kernels"))
      cfg.affinity.kernels.dilations = a["kernels"].get<std::vector<int>>();
    const std::string mode = a.value("mode", "aa");
    if (mode == "sa")
      cfg.affinity.mode = AffinityMode::kSA;
    else if (mode == "aa")
      cfg.affinity.mode = AffinityMode::kAA;
    else
      throw validation_error("affinity.mode: expected sa|aa");
    cfg.affinity.modeling_fn = parse_modeling_fn(a.value("modeling_fn", "max"));
    cfg.affinity.prob_floor = a.value("prob_floor", cfg.affinity.prob_floor);
    cfg.affinity.detach_conf = a.value("detach_conf", cfg.affinity.detach_conf);
    cfg.affinity.threads = a.value("threads", cfg.affinity.threads);
  } else {
    cfg.affinity.mode = AffinityMode::kAA;
  }
  if (j.contains("lr_loss")) {
    const json& l = j["lr_loss"];
    cfg.lr_loss.margin_n = l.value("margin_n", cfg.lr_loss.margin_n);
    cfg.lr_loss.gamma = l.value("gamma", cfg.lr_loss.gamma);
    cfg.lr_loss.sim_eps = l.value("sim_eps", cfg.lr_loss.sim_eps);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    cfg.model.in_channels = m.value("in_channels", cfg.model.in_channels);
    cfg.model.hidden = m.value("hidden", cfg.model.hidden);
    cfg.model.embed_dim = m.value("embed_dim", cfg.model.embed_dim);
    cfg.model.num_classes = m.value("num_classes", cfg.model.num_classes);
  }
  if (cfg.affinity.kernels.dilations.empty()) cfg.affinity.kernels.dilations = {4, 8, 12, 24};
  return cfg;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw format_error(path.string() + ": " + e.what());
  }
}

void write_scene_dir(const SceneInstance& inst, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  tensor_write(inst.image, dir / "image.dten");
  labelmap_write_pgm(inst.gt, dir / "gt.pgm");
  labelmap_write_pgm(inst.pseudo, dir / "pseudo.pgm");
  tensor_write(inst.conf, dir / "conf.dten");
  std::ofstream labels(dir / "labels.json");
  if (!labels) throw io_error("cannot write labels.json in " + dir.string());
  json present = json::array();
  for (int c = 1; c < inst.spec.num_classes; ++c)
    if (inst.image_labels[c]) present.push_back(c);
  labels << json{{"num_classes", inst.spec.num_classes},
                 {"image_labels", inst.image_labels},
                 {"present", present}}
                .dump(2)
         << "\n";
  std::ofstream spec(dir / "spec.json");
  if (!spec) throw io_error("cannot write spec.json in " + dir.string());
  spec << scene_to_json(inst.spec).dump(2) << "\n";
}

struct LoadedScene {
  DenseTensor image;
  LabelMap pseudo;
  std::vector<int> image_labels;
  int num_classes = 0;
  bool has_gt = false;
  LabelMap gt;
};

LoadedScene load_scene_dir(const std::filesystem::path& dir) {
  LoadedScene s;
  s.image = tensor_read(dir / "image.dten");
  s.pseudo = labelmap_read_pgm(dir / "pseudo.pgm");
  const json labels = load_json_file(dir / "labels.json");
  s.num_classes = labels.at("num_classes").get<int>();
  s.image_labels = labels.at("image_labels").get<std::vector<int>>();
  if (std::filesystem::exists(dir / "gt.pgm")) {
    s.gt = labelmap_read_pgm(dir / "gt.pgm");
    s.has_gt = true;
  }
  return s;
}

// ---- subcommand implementations ---------------------------------------------

int run_affinity_loss(const std::string& probs_path, const std::string& labels_path,
                      const std::string& conf_path, const std::string& mode,
                      const std::string& kernels_csv, double margin,
                      const std::string& modeling_fn, double prob_floor,
                      const std::string& grad_out, int threads) {
  const DenseTensor probs = tensor_read(probs_path);
  if (probs.rank() != 3) throw validation_error("--probs: tensor must be H x W x C");
  check_prob_rows(probs, "--probs");
  const LabelMap labels = labelmap_read_pgm(labels_path);
  validate_labels(labels, static_cast<int>(probs.dims[2]));

  AffinityConfig cfg;
  cfg.kernels = parse_kernels(kernels_csv);
  cfg.margin_m = margin;
  cfg.prob_floor = prob_floor;
  cfg.modeling_fn = parse_modeling_fn(modeling_fn);
  cfg.threads = threads;

  const PairSet pairs = build_pairs(labels, cfg.kernels);
  AffinityReport report;
  if (mode == "sa") {
    cfg.mode = AffinityMode::kSA;
    report = sa_loss(probs, pairs, cfg);
  } else if (mode == "aa") {
    cfg.mode = AffinityMode::kAA;
    if (conf_path.empty())
      throw validation_error(
          "--conf is required for --mode aa (the adaptive weight needs per-pixel confidences)");
    const DenseTensor conf = tensor_read(conf_path);
    report = aa_loss(probs, conf, pairs, cfg);
  } else {
    throw validation_error("--mode: expected sa|aa, got \"" + mode + "\"");
  }

  json out = {{"mode", mode},
              {"total", report.total},
              {"per_dilation", dilation_json(report, pairs)},
              {"grad_written_to", nullptr}};
  if (!grad_out.empty()) {
    tensor_write(report.grad_probs, grad_out);
    out["grad_written_to"] = grad_out;
  }
  emit(out);
  return 0;
}

int run_lr_loss(const std::string& embed_path, const std::string& labels_path,
                const std::string& conf_path, double gamma, double margin_n,
                const std::string& grad_out, int threads) {
  const DenseTensor embed = tensor_read(embed_path);
  if (embed.rank() != 3) throw validation_error("--embed: tensor must be H x W x C");
  const LabelMap labels = labelmap_read_pgm(labels_path);
  const DenseTensor conf = tensor_read(conf_path);

  LrConfig cfg;
  cfg.gamma = gamma;
  cfg.margin_n = margin_n;
  cfg.threads = threads;
  const LrReport report = lr_loss(embed, labels, conf, cfg);

  json out = {{"total", report.total},       {"l_pos", report.l_pos},
              {"l_neg", report.l_neg},       {"fg_count", report.fg_count},
              {"bg_count", report.bg_count}, {"grad_written_to", nullptr}};
  if (!grad_out.empty()) {
    tensor_write(report.grad_embed, grad_out);
    out["grad_written_to"] = grad_out;
  }
  emit(out);
  return 0;
}

int run_reassign(const std::string& embed_path, const std::string& labels_path,
                 const std::string& conf_path, double gamma, const std::string& out_path) {
  const DenseTensor embed = tensor_read(embed_path);
  if (embed.rank() != 3) throw validation_error("--embed: tensor must be H x W x C");
  const LabelMap labels = labelmap_read_pgm(labels_path);
  const DenseTensor conf = tensor_read(conf_path);

  LrConfig cfg;
  cfg.gamma = gamma;
  const CentroidSet centroids = compute_centroids(embed, labels, conf);
  const Reassignment r = reassign(embed, labels, centroids, cfg);

  LabelMap out_map = labels;
  std::size_t changed = 0;
  for (const auto& item : r.items) {
    if (item.assigned != item.given) ++changed;
    out_map.labels[item.pixel] = item.assigned;
  }
  labelmap_write_pgm(out_map, out_path);
  emit({{"out", out_path},
        {"pixels", r.items.size()},
        {"changed", changed},
        {"fg_count", r.fg_count},
        {"bg_count", r.bg_count},
        {"centroids", centroids.items.size()}});
  return 0;
}

int run_grad_check(const std::string& target, std::uint64_t seed, const std::string& size,
                   const std::string& kernels_csv, double gamma) {
  const Size3 sz = parse_size(size);
  if (sz.h > 16 || sz.w > 16)
    throw validation_error("--size: grad-check instances are capped at 16x16 spatial");
  GradCheckResult r;
  double tolerance = kLossGradTol;
  if (target == "affinity-sa") {
    r = affinity_grad_check(AffinityMode::kSA, sz.h, sz.w, sz.c, parse_kernels(kernels_csv), seed);
  } else if (target == "affinity-aa") {
    r = affinity_grad_check(AffinityMode::kAA, sz.h, sz.w, sz.c, parse_kernels(kernels_csv), seed);
  } else if (target == "lr") {
    r = lr_grad_check(sz.h, sz.w, sz.c, 3, gamma, seed);
  } else if (target == "model") {
    tolerance = kModelGradTol;
    r = model_grad_check(sz.h, sz.w, static_cast<int>(sz.c), seed);
  } else {
    throw validation_error("--target: expected affinity-sa|affinity-aa|lr|model");
  }
  const bool pass = r.max_rel_err < tolerance;
  emit({{"target", target},
        {"seed", seed},
        {"size", size},
        {"max_rel_err", r.max_rel_err},
        {"checked", r.checked},
        {"excluded", r.excluded},
        {"tolerance", tolerance},
        {"pass", pass}});
  if (!pass)
    throw ContractFailure{"grad-check " + target + " max_rel_err " +
                          std::to_string(r.max_rel_err) + " exceeds " + std::to_string(tolerance)};
  return 0;
}

int run_synth_gen(const std::string& spec_path, const std::string& out_dir) {
  const SceneSpec spec = scene_from_json(load_json_file(spec_path));
  const SceneInstance inst = generate(spec);
  write_scene_dir(inst, out_dir);
  emit({{"out", out_dir},
        {"files", {"image.dten", "gt.pgm", "pseudo.pgm", "conf.dten", "labels.json", "spec.json"}},
        {"present_classes", inst.image_labels}});
  return 0;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  const json cfg_json = load_json_file(config_path);
  TrainConfig cfg = train_config_from_json(cfg_json);

  TrainSample sample;
  bool has_gt = false;
  LabelMap gt;
  int num_classes = cfg.model.num_classes;
  if (cfg_json.contains("scene")) {
    const SceneInstance inst = generate(scene_from_json(cfg_json["scene"]));
    sample = TrainSample{inst.image, inst.pseudo, inst.image_labels};
    gt = inst.gt;
    has_gt = true;
    if (num_classes == 0) num_classes = inst.spec.num_classes;
  } else if (cfg_json.contains("data")) {
    const LoadedScene s = load_scene_dir(cfg_json["data"].get<std::string>());
    sample = TrainSample{s.image, s.pseudo, s.image_labels};
    has_gt = s.has_gt;
    if (has_gt) gt = s.gt;
    if (num_classes == 0) num_classes = s.num_classes;
  } else {
    throw validation_error("train config needs a \"scene\" object or a \"data\" directory");
  }
  cfg.model.num_classes = num_classes;

  std::filesystem::create_directories(out_dir);
  std::ofstream csv(std::filesystem::path(out_dir) / "metrics.csv");
  if (!csv) throw io_error("cannot write metrics.csv in " + out_dir);
  csv << "epoch,step,cls,ce,aa,lr,total\n";
  csv.precision(10);

  Trainer trainer(cfg, sample);
  StepMetrics last;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int step = 1; step <= cfg.steps_per_epoch; ++step) {
      last = trainer.step(epoch);
      csv << epoch << "," << step << "," << last.cls << "," << last.ce << "," << last.aa << ","
          << last.lr << "," << last.total << "\n";
    }
  }
  csv.close();

  const auto ckpt_dir = std::filesystem::path(out_dir) / "checkpoint";
  save_checkpoint(trainer.model(), ckpt_dir);
  const LabelMap refined = refine(trainer.model(), sample.image);
  labelmap_write_pgm(refined, std::filesystem::path(out_dir) / "refined.pgm");

  json out = {{"out", out_dir},
              {"epochs", cfg.epochs},
              {"steps_per_epoch", cfg.steps_per_epoch},
              {"final",
               {{"cls", last.cls},
                {"ce", last.ce},
                {"aa", last.aa},
                {"lr", last.lr},
                {"total", last.total}}},
              {"checkpoint", ckpt_dir.string()},
              {"metrics_csv", (std::filesystem::path(out_dir) / "metrics.csv").string()},
              {"refined", (std::filesystem::path(out_dir) / "refined.pgm").string()}};
  if (has_gt) {
    out["miou_pseudo"] = miou(sample.pseudo, gt, num_classes).mean;
    out["miou_refined"] = miou(refined, gt, num_classes).mean;
  }
  emit(out);
  return 0;
}

int run_refine(const std::string& ckpt_dir, const std::string& in_dir,
               const std::string& out_path) {
  const ToyModel model = load_checkpoint(ckpt_dir);
  const LoadedScene s = load_scene_dir(in_dir);
  const LabelMap refined = refine(model, s.image);
  labelmap_write_pgm(refined, out_path);
  json out = {{"out", out_path}};
  if (s.has_gt) out["miou_vs_gt"] = miou(refined, s.gt, model.cfg.num_classes).mean;
  emit(out);
  return 0;
}

int run_eval_miou(const std::string& pred_path, const std::string& gt_path, int classes) {
  const LabelMap pred = labelmap_read_pgm(pred_path);
  const LabelMap gt = labelmap_read_pgm(gt_path);
  const IoUReport r = miou(pred, gt, classes);
  emit({{"miou", r.mean}, {"classes", r.classes}, {"iou", r.iou}});
  return 0;
}

int run_bench_affinity(const std::string& size, const std::string& kernels_csv, int repeat,
                       const std::string& mode, int threads, std::uint64_t seed) {
  if (repeat < 1) throw validation_error("--repeat must be >= 1");
  const Size3 sz = parse_size(size);
  const KernelSet kernels = parse_kernels(kernels_csv);
  Rng rng(seed);

  LabelMap labels(sz.h, sz.w);
  for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng.next_below(sz.c));
  const auto pd = detail::random_prob_map(rng, sz.h * sz.w, sz.c);
  DenseTensor probs({sz.h, sz.w, sz.c});
  for (std::size_t i = 0; i < pd.size(); ++i) probs.data[i] = static_cast<float>(pd[i]);
  DenseTensor conf({sz.h, sz.w});
  for (auto& v : conf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

  AffinityConfig cfg;
  cfg.kernels = kernels;
  cfg.threads = threads;
  cfg.mode = mode == "sa" ? AffinityMode::kSA : AffinityMode::kAA;

  const PairSet pairs = build_pairs(labels, kernels);
  std::size_t total_pairs = 0;
  for (const auto& c : pair_counts(pairs)) total_pairs += c.fg_pos + c.bg_pos + c.neg;

  // one untimed warmup, then `repeat` timed forward+backward evaluations
  std::vector<double> seconds;
  double sink = 0;
  for (int it = -1; it < repeat; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const AffinityReport r = cfg.mode == AffinityMode::kSA ? sa_loss(probs, pairs, cfg)
                                                           : aa_loss(probs, conf, pairs, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    sink += r.total + r.grad_probs.data[0];
    if (it >= 0) seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  double mean = 0;
  for (double s : seconds) mean += s;
  mean /= double(seconds.size());
  double var = 0;
  for (double s : seconds) var += (s - mean) * (s - mean);
  const double stddev = seconds.size() > 1 ? std::sqrt(var / double(seconds.size() - 1)) : 0.0;

  emit({{"size", size},
        {"mode", mode},
        {"kernels", kernels.dilations},
        {"threads", threads},
        {"repeat", repeat},
        {"pairs", total_pairs},
        {"mean_s", mean},
        {"stddev_s", stddev},
        {"pairs_per_s", total_pairs / mean},
        {"checksum", sink}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive pairwise-affinity and label-reassign losses toolkit"};
  app.require_subcommand(1);

  // affinity-loss
  std::string probs_path, labels_path, conf_path, mode = "sa", kernels_csv = "4,8,12,24";
  std::string modeling_fn = "max", grad_out;
  double margin = 3.0, prob_floor = 1e-8;
  int threads = 1;
  auto* aff = app.add_subcommand("affinity-loss", "pairwise affinity loss over a probability map");
  aff->add_option("--probs", probs_path, "probability map (DTEN, HxWxC)")->required();
  aff->add_option("--labels", labels_path, "pseudo-label map (PGM)")->required();
  aff->add_option("--conf", conf_path, "confidence map (DTEN, HxW); required for aa");
  aff->add_option("--mode", mode, "sa|aa");
  aff->add_option("--kernels", kernels_csv, "comma-separated dilations");
  aff->add_option("--margin", margin, "hinge margin m");
  aff->add_option("--modeling-fn", modeling_fn, "max|min|plus");
  aff->add_option("--prob-floor", prob_floor, "clamp for the KL logs");
  aff->add_option("--grad-out", grad_out, "write d total / d probs as DTEN");
  aff->add_option("--threads", threads, "worker threads (totals are bit-stable)");

  // lr-loss
  std::string embed_path, lr_labels, lr_conf, lr_grad_out;
  double gamma = 2.0, margin_n = 1.0;
  int lr_threads = 1;
  auto* lr = app.add_subcommand("lr-loss", "label-reassign loss over an embedding map");
  lr->add_option("--embed", embed_path, "embedding map (DTEN, HxWxC)")->required();
  lr->add_option("--labels", lr_labels, "pseudo-label map (PGM)")->required();
  lr->add_option("--conf", lr_conf, "confidence map (DTEN, HxW)")->required();
  lr->add_option("--gamma", gamma, "concentration exponent");
  lr->add_option("--margin-n", margin_n, "hinge threshold n");
  lr->add_option("--grad-out", lr_grad_out, "write d total / d embed as DTEN");
  lr->add_option("--threads", lr_threads, "worker threads");

  // reassign
  std::string re_embed, re_labels, re_conf, re_out;
  double re_gamma = 2.0;
  auto* re = app.add_subcommand("reassign", "relabel pixels by nearest class centroid");
  re->add_option("--embed", re_embed, "embedding map (DTEN)")->required();
  re->add_option("--labels", re_labels, "pseudo-label map (PGM)")->required();
  re->add_option("--conf", re_conf, "confidence map (DTEN)")->required();
  re->add_option("--gamma", re_gamma, "concentration exponent for the report");
  re->add_option("--out", re_out, "output label map (PGM)")->required();

  // grad-check
  std::string gc_target, gc_size = "8x8x3", gc_kernels = "1,2";
  std::uint64_t gc_seed = 1;
  double gc_gamma = 2.0;
  auto* gc = app.add_subcommand("grad-check", "analytic vs finite-difference gradients");
  gc->add_option("--target", gc_target, "affinity-sa|affinity-aa|lr|model")->required();
  gc->add_option("--seed", gc_seed, "instance seed");
  gc->add_option("--size", gc_size, "HxWxC instance size");
  gc->add_option("--kernels", gc_kernels, "dilations for affinity targets");
  gc->add_option("--gamma", gc_gamma, "gamma for the lr target");

  // synth gen
  auto* synth = app.add_subcommand("synth", "synthetic scene tools");
  synth->require_subcommand(1);
  std::string sg_spec, sg_out;
  auto* sg = synth->add_subcommand("gen", "generate a scene directory from a spec");
  sg->add_option("--spec", sg_spec, "scene spec (JSON)")->required();
  sg->add_option("--out", sg_out, "output directory")->required();

  // train
  std::string tr_config, tr_out;
  auto* tr = app.add_subcommand("train", "train the toy refinement model");
  tr->add_option("--config", tr_config, "run config (JSON)")->required();
  tr->add_option("--out", tr_out, "output directory")->required();

  // refine
  std::string rf_ckpt, rf_in, rf_out;
  auto* rf = app.add_subcommand("refine", "argmax-relabel a scene with a trained model");
  rf->add_option("--ckpt", rf_ckpt, "checkpoint directory")->required();
  rf->add_option("--in", rf_in, "scene directory")->required();
  rf->add_option("--out", rf_out, "output label map (PGM)")->required();

  // eval miou
  auto* eval = app.add_subcommand("eval", "evaluation tools");
  eval->require_subcommand(1);
  std::string ev_pred, ev_gt;
  int ev_classes = 0;
  auto* ev = eval->add_subcommand("miou", "mean intersection-over-union");
  ev->add_option("--pred", ev_pred, "prediction map (PGM)")->required();
  ev->add_option("--gt", ev_gt, "ground-truth map (PGM)")->required();
  ev->add_option("--classes", ev_classes, "number of classes")->required();

  // bench affinity
  auto* bench = app.add_subcommand("bench", "performance probes");
  bench->require_subcommand(1);
  std::string bn_size = "321x321x21", bn_kernels = "4,8,12,24", bn_mode = "aa";
  int bn_repeat = 5, bn_threads = 1;
  std::uint64_t bn_seed = 1234;
  auto* bn = bench->add_subcommand("affinity", "forward+backward affinity throughput");
  bn->add_option("--size", bn_size, "HxWxC");
  bn->add_option("--kernels", bn_kernels, "comma-separated dilations");
  bn->add_option("--repeat", bn_repeat, "timed iterations");
  bn->add_option("--mode", bn_mode, "sa|aa");
  bn->add_option("--threads", bn_threads, "worker threads");
  bn->add_option("--seed", bn_seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (aff->parsed())
      return run_affinity_loss(probs_path, labels_path, conf_path, mode, kernels_csv, margin,
                               modeling_fn, prob_floor, grad_out, threads);
    if (lr->parsed())
      return run_lr_loss(embed_path, lr_labels, lr_conf, gamma, margin_n, lr_grad_out, lr_threads);
    if (re->parsed()) return run_reassign(re_embed, re_labels, re_conf, re_gamma, re_out);
    if (gc->parsed()) return run_grad_check(gc_target, gc_seed, gc_size, gc_kernels, gc_gamma);
    if (sg->parsed()) return run_synth_gen(sg_spec, sg_out);
    if (tr->parsed()) return run_train(tr_config, tr_out);
    if (rf->parsed()) return run_refine(rf_ckpt, rf_in, rf_out);
    if (ev->parsed()) return run_eval_miou(ev_pred, ev_gt, ev_classes);
    if (bn->parsed())
      return run_bench_affinity(bn_size, bn_kernels, bn_repeat, bn_mode, bn_threads, bn_seed);
  } catch (const ContractFailure& e) {
    std::cerr << "contract failure: " << e.what << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const validation_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  std::cerr << "no subcommand executed\n";
  return 1;
}
