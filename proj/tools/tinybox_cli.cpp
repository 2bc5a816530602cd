// Command-line harness: loss ablation, pruning simulation, NMS tuning,
// evaluation, toy training, and parameter accounting.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 invariant violation.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tinybox/tinybox.hpp"

namespace fs = std::filesystem;
using namespace tinybox;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string format = "table";
};

ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  return ReportFormat::table;
}

void emit(const SweepReport& r, const GlobalOptions& g, const std::string& name) {
  const ReportFormat f = parse_format(g.format);
  if (g.out_dir.empty()) {
    std::cout << emit_report(r, f);
    if (f == ReportFormat::table) std::cout << "\n";
    return;
  }
  const fs::path path = write_report(r, f, g.out_dir, name);
  std::cerr << "wrote " << path.string() << "\n";
}

Shape4 to_shape(const std::vector<std::size_t>& v) {
  if (v.size() != 4) throw Error(ErrorKind::InvalidArgument, "shape needs 4 dimensions");
  return {v[0], v[1], v[2], v[3]};
}

// ----------------------------------------------------------------------------

struct LossAblateOptions {
  std::vector<double> lambdas{0.0, 0.25, 0.5, 0.75, 1.0};
  int image_size = 640;
  double target_size = 5.0;
  double nearby = 2.0;
  double distant = 15.0;
  std::string weight_mode = "paper_literal";
  std::size_t grad_trials = 200;
};

void run_loss_ablate(const LossAblateOptions& o, const GlobalOptions& g) {
  LambdaScenario sc;
  sc.image_size = o.image_size;
  sc.target_size = o.target_size;
  sc.nearby_offset = o.nearby;
  sc.distant_offset = o.distant;
  if (o.weight_mode == "per_box") sc.base.weight_mode = WeightMode::per_box;
  const LambdaSweepResult res = lambda_sweep(sc, o.lambdas);
  emit(res.report, g, "lambda_sweep");

  SweepReport checks;
  checks.title = "loss_checks";
  checks.columns = {"check", "value"};
  checks.rows.push_back({std::string("endpoints_ok"), static_cast<std::int64_t>(res.endpoints_ok)});
  checks.rows.push_back({std::string("max_affinity_rel_error"), res.max_affinity_error});
  for (double lam : {0.0, 0.5, 1.0}) {
    SalNwdConfig cfg;
    cfg.lambda = lam;
    const GradCheckReport gc = sal_nwd_grad_check(cfg, o.grad_trials, g.seed);
    checks.rows.push_back({"grad_max_rel_error_lambda_" + format_double(lam), gc.max_rel_error});
  }
  emit(checks, g, "loss_checks");
  if (!res.endpoints_ok) throw Error(ErrorKind::InvalidArgument, "lambda endpoints do not collapse");
}

// ----------------------------------------------------------------------------

struct PruneSimOptions {
  std::string mode = "all";
  std::string bank;
  std::vector<std::size_t> shape{64, 16, 3, 3};
  int seeds = 1;
  std::vector<double> thetas{0.10, 0.20, 0.30, 0.85};
  std::vector<int> intervals{1, 3, 5, 10};
  std::vector<int> checkpoints{15, 25, 50};
  int epochs = 50;
  int warmup = 10;
  double theta = 0.85;
  double drift_rate = 0.05;
  double noise = 0.0;
  int freeze_epoch = 20;
  std::string write_bank;
};

void run_prune_sim(const PruneSimOptions& o, const GlobalOptions& g) {
  if (o.mode == "theta" || o.mode == "all") {
    if (!o.bank.empty()) {
      emit(theta_sweep(read_tensor(o.bank), o.thetas), g, "theta_sweep");
    } else if (o.seeds > 1) {
      emit(theta_sweep_random(to_shape(o.shape), o.thetas, o.seeds, g.seed), g, "theta_sweep");
    } else {
      const FilterBank fb = random_gaussian_bank(to_shape(o.shape), g.seed);
      if (!o.write_bank.empty()) write_tensor(o.write_bank, fb);
      emit(theta_sweep(fb, o.thetas), g, "theta_sweep");
    }
  }
  if (o.mode == "lazy" || o.mode == "all") {
    DriftSpec d;
    d.epochs = o.epochs;
    d.warmup_epochs = o.warmup;
    d.theta = o.theta;
    d.drift_rate = o.drift_rate;
    d.noise = o.noise;
    d.freeze_epoch = o.freeze_epoch;
    d.intervals = o.intervals;
    const LazySweepResult res = lazy_sweep(d, o.checkpoints, g.seed);
    emit(res.report, g, "lazy_sweep");
    SweepReport trace;
    trace.title = "sparsity_trace";
    trace.columns = {"epoch"};
    for (int n : res.trace.intervals) trace.columns.push_back("N" + std::to_string(n));
    for (int e = 1; e <= d.epochs; ++e) {
      std::vector<Cell> row{static_cast<std::int64_t>(e)};
      for (const auto& s : res.trace.sparsity) row.emplace_back(s[static_cast<std::size_t>(e - 1)]);
      trace.rows.push_back(std::move(row));
    }
    emit(trace, g, "sparsity_trace");
  }
}

// ----------------------------------------------------------------------------

struct DataOptions {
  std::string dets;
  std::string gts;
};

Scene load_or_generate(const DataOptions& d, const GlobalOptions& g, bool crowded) {
  if (d.dets.empty() != d.gts.empty())
    throw Error(ErrorKind::InvalidArgument, "--dets and --gts must be given together");
  if (!d.dets.empty()) {
    Scene s;
    s.detections = read_detections_jsonl(read_text_file(d.dets));
    s.objects = read_ground_truth_jsonl(read_text_file(d.gts));
    return s;
  }
  if (crowded) return gen_crowded_duplicate_scene(g.seed);
  SceneSpec spec;
  spec.seed = g.seed;
  DetectionNoise noise;
  noise.false_positives = 40;
  return gen_scene_with_detections(spec, noise);
}

struct NmsTuneOptions {
  DataOptions data;
  std::vector<double> conf_grid{0.001, 0.005, 0.010, 0.050};
  std::vector<double> iou_grid{0.4, 0.5, 0.6, 0.7};
};

void run_nms_tune(const NmsTuneOptions& o, const GlobalOptions& g) {
  const Scene s = load_or_generate(o.data, g, true);
  SweepReport r;
  r.title = "nms_grid";
  r.columns = {"rank", "conf", "iou", "map50"};
  std::int64_t rank = 1;
  for (const auto& c : grid_search_nms(s.detections, s.objects, o.conf_grid, o.iou_grid))
    r.rows.push_back({rank++, c.conf, c.iou, c.map50});
  emit(r, g, "nms_grid");
}

// ----------------------------------------------------------------------------

struct EvalCmdOptions {
  DataOptions data;
  double conf = 0.001;
  double image_size = 1280;
  double f1_iou = 0.5;
  std::string write_scene;
};

void run_eval(const EvalCmdOptions& o, const GlobalOptions& g) {
  const Scene s = load_or_generate(o.data, g, false);
  if (!o.write_scene.empty()) {
    write_text_file(o.write_scene + ".dets.jsonl", write_detections_jsonl(s.detections));
    write_text_file(o.write_scene + ".gts.jsonl", write_ground_truth_jsonl(s.objects));
  }
  EvalOptions opt;
  opt.conf_threshold = o.conf;
  opt.image_size = std::make_pair(o.image_size, o.image_size);
  const EvalResult res = map_eval(s.detections, s.objects, opt);

  SweepReport summary;
  summary.title = "eval_summary";
  summary.columns = {"metric", "value"};
  summary.rows.push_back({std::string("map50"), res.map50});
  summary.rows.push_back({std::string("map50_95"), res.map5095});
  summary.rows.push_back({std::string("recall"), res.recall});
  if (res.map5095_by_area) {
    summary.rows.push_back({std::string("map50_95_small"), (*res.map5095_by_area)[0]});
    summary.rows.push_back({std::string("map50_95_medium"), (*res.map5095_by_area)[1]});
    summary.rows.push_back({std::string("map50_95_large"), (*res.map5095_by_area)[2]});
  }
  for (const auto& [c, ap] : res.per_class_ap50) summary.rows.push_back({"ap50_class_" + std::to_string(c), ap});
  emit(summary, g, "eval_summary");

  SweepReport pr;
  pr.title = "pr_curves";
  pr.columns = {"class", "rank", "recall", "precision"};
  for (const auto& [c, pts] : res.pr_curves)
    for (std::size_t i = 0; i < pts.size(); ++i)
      pr.rows.push_back({static_cast<std::int64_t>(c), static_cast<std::int64_t>(i + 1), pts[i].recall, pts[i].precision});
  emit(pr, g, "pr_curves");

  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  const F1Curve f1 = f1_confidence_sweep(s.detections, s.objects, o.f1_iou, grid);
  SweepReport f1r;
  f1r.title = "f1_confidence";
  f1r.columns = {"confidence", "macro_f1"};
  for (std::size_t i = 0; i < grid.size(); ++i) f1r.rows.push_back({grid[i], f1.macro[i]});
  f1r.rows.push_back({f1.best_threshold, f1.best_f1});
  emit(f1r, g, "f1_confidence");

  SweepReport cm;
  cm.title = "confusion_normalized";
  cm.columns = {"true_class"};
  const std::size_t K = res.confusion.classes;
  for (std::size_t c = 0; c <= K; ++c) cm.columns.push_back(c == K ? "background" : "pred_" + std::to_string(c));
  for (std::size_t r = 0; r <= K; ++r) {
    std::vector<Cell> row{r == K ? std::string("background") : std::to_string(r)};
    for (std::size_t c = 0; c <= K; ++c) row.emplace_back(res.confusion.normalized(r, c));
    cm.rows.push_back(std::move(row));
  }
  emit(cm, g, "confusion");
}

// ----------------------------------------------------------------------------

struct TrainOptions {
  std::string loss = "sal_nwd";
  std::string offset = "distant";
  int steps = 2000;
  double lr = 0.001;
  double lambda = 0.5;
  double C = 12.8;
  double epsilon = 1e-4;
};

void run_train(const TrainOptions& o, const GlobalOptions& g) {
  TrainSpec spec;
  spec.loss = o.loss == "iou" ? TrainLoss::iou : o.loss == "ciou" ? TrainLoss::ciou
              : o.loss == "nwd" ? TrainLoss::nwd : TrainLoss::sal_nwd;
  spec.init_offset = o.offset == "nearby" ? InitOffset::nearby : InitOffset::distant;
  spec.steps = o.steps;
  spec.learning_rate = o.lr;
  spec.lambda = o.lambda;
  spec.C = o.C;
  spec.epsilon = o.epsilon;
  spec.seed = g.seed;
  const TrainTrace t = toy_train(spec);
  SweepReport r;
  r.title = "train_trace";
  r.columns = {"step", "loss", "center_error_px"};
  for (std::size_t i = 0; i < t.loss.size(); ++i)
    r.rows.push_back({static_cast<std::int64_t>(i), t.loss[i], t.center_error[i]});
  r.rows.push_back({static_cast<std::int64_t>(t.loss.size()), std::string("final"), t.final_center_error});
  emit(r, g, "train_trace");
}

// ----------------------------------------------------------------------------

struct BudgetOptions {
  MSFDWidths widths;
};

void run_msfd_budget(const BudgetOptions& o, const GlobalOptions& g) {
  const MSFDParams p = make_msfd_params(o.widths, g.seed);
  SweepReport r;
  r.title = "msfd_budget";
  r.columns = {"item", "value"};
  r.rows.push_back({std::string("dsconv_block1_params"), static_cast<std::int64_t>(count_params(p.block1))});
  r.rows.push_back({std::string("dsconv_block2_params"), static_cast<std::int64_t>(count_params(p.block2))});
  r.rows.push_back({std::string("se_params"), static_cast<std::int64_t>(count_params(p.se))});
  r.rows.push_back({std::string("fuse_conv_params"), static_cast<std::int64_t>(p.fuse.size() + p.fuse_bias.size())});
  r.rows.push_back({std::string("total_params"), static_cast<std::int64_t>(count_params(p))});
  r.rows.push_back({std::string("reference_budget"), std::int64_t{114592}});
  for (std::size_t c : {64u, 128u}) {
    const ConvSpec spec{c, c, 3, 1, 1};
    r.rows.push_back({"flop_ratio_c" + std::to_string(c), flop_ratio(spec, 320, 320)});
  }
  emit(r, g, "msfd_budget");
}

// ----------------------------------------------------------------------------

struct VisDroneOptions {
  std::string input;
  double width = 0;
  double height = 0;
  std::string image_id = "0";
};

void run_convert_visdrone(const VisDroneOptions& o, const GlobalOptions& g) {
  const auto gts = parse_visdrone_annotations(read_text_file(o.input), o.width, o.height, o.image_id);
  const std::string text = write_ground_truth_jsonl(gts);
  if (g.out_dir.empty()) {
    std::cout << text;
  } else {
    fs::create_directories(g.out_dir);
    write_text_file(fs::path(g.out_dir) / (o.image_id + ".gts.jsonl"), text);
  }
}

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::DivergenceDetected:
    case ErrorKind::NonMonotoneEpoch:
      return 3;
    default:
      return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tinybox: tiny-object loss, pruning and evaluation harness"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "write reports here instead of stdout");
  app.add_option("--format", g.format, "csv, json or table")
      ->check(CLI::IsMember({"csv", "json", "table"}))
      ->capture_default_str();

  LossAblateOptions la;
  auto* loss = app.add_subcommand("loss-ablate", "lambda sweep over nearby/distant box pairs, plus gradient checks");
  loss->fallthrough();
  loss->add_option("--lambdas", la.lambdas)->delimiter(',');
  loss->add_option("--image-size", la.image_size);
  loss->add_option("--target-size", la.target_size);
  loss->add_option("--nearby-offset", la.nearby);
  loss->add_option("--distant-offset", la.distant);
  loss->add_option("--weight-mode", la.weight_mode)->check(CLI::IsMember({"paper_literal", "per_box"}));
  loss->add_option("--grad-trials", la.grad_trials);

  PruneSimOptions ps;
  auto* prune = app.add_subcommand("prune-sim", "theta and lazy-interval sweeps for similarity pruning");
  prune->fallthrough();
  prune->add_option("--mode", ps.mode)->check(CLI::IsMember({"theta", "lazy", "all"}));
  prune->add_option("--bank", ps.bank, "filter bank manifest (.json beside .bin)");
  prune->add_option("--shape", ps.shape)->delimiter(',');
  prune->add_option("--seeds", ps.seeds, "random banks to average over");
  prune->add_option("--thetas", ps.thetas)->delimiter(',');
  prune->add_option("--intervals", ps.intervals)->delimiter(',');
  prune->add_option("--checkpoints", ps.checkpoints)->delimiter(',');
  prune->add_option("--epochs", ps.epochs);
  prune->add_option("--warmup", ps.warmup);
  prune->add_option("--theta", ps.theta);
  prune->add_option("--drift-rate", ps.drift_rate);
  prune->add_option("--noise", ps.noise);
  prune->add_option("--freeze-epoch", ps.freeze_epoch);
  prune->add_option("--write-bank", ps.write_bank, "save the random bank as a manifest + blob");

  NmsTuneOptions nt;
  auto* tune = app.add_subcommand("nms-tune", "grid search over NMS confidence and IoU thresholds");
  tune->fallthrough();
  tune->add_option("--dets", nt.data.dets);
  tune->add_option("--gts", nt.data.gts);
  tune->add_option("--conf-grid", nt.conf_grid)->delimiter(',');
  tune->add_option("--iou-grid", nt.iou_grid)->delimiter(',');

  EvalCmdOptions ev;
  auto* eval = app.add_subcommand("eval", "mAP, recall, PR and F1 curves, confusion matrix");
  eval->fallthrough();
  eval->add_option("--dets", ev.data.dets);
  eval->add_option("--gts", ev.data.gts);
  eval->add_option("--conf", ev.conf);
  eval->add_option("--image-size", ev.image_size);
  eval->add_option("--write-scene", ev.write_scene, "save the synthetic scene as <prefix>.{dets,gts}.jsonl");

  TrainOptions tr;
  auto* train = app.add_subcommand("train-toy", "gradient descent on boxes with a chosen loss");
  train->fallthrough();
  train->add_option("--loss", tr.loss)->check(CLI::IsMember({"iou", "ciou", "nwd", "sal_nwd"}));
  train->add_option("--offset", tr.offset)->check(CLI::IsMember({"nearby", "distant"}));
  train->add_option("--steps", tr.steps);
  train->add_option("--lr", tr.lr);
  train->add_option("--lambda", tr.lambda);
  train->add_option("--C", tr.C);
  train->add_option("--epsilon", tr.epsilon);

  BudgetOptions bo;
  auto* budget = app.add_subcommand("msfd-budget", "parameter and MAC accounting for the P2 branch");
  budget->fallthrough();
  budget->add_option("--p2-channels", bo.widths.p2_channels);
  budget->add_option("--mid-channels", bo.widths.mid_channels);
  budget->add_option("--p3-channels", bo.widths.p3_channels);
  budget->add_option("--head-channels", bo.widths.head_channels);
  budget->add_option("--fuse-kernel", bo.widths.fuse_kernel);

  VisDroneOptions vd;
  auto* conv = app.add_subcommand("convert-visdrone", "VisDrone annotation text to ground-truth JSONL");
  conv->fallthrough();
  conv->add_option("--input", vd.input)->required();
  conv->add_option("--width", vd.width)->required();
  conv->add_option("--height", vd.height)->required();
  conv->add_option("--image-id", vd.image_id);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*loss) run_loss_ablate(la, g);
    else if (*prune) run_prune_sim(ps, g);
    else if (*tune) run_nms_tune(nt, g);
    else if (*eval) run_eval(ev, g);
    else if (*train) run_train(tr, g);
    else if (*budget) run_msfd_budget(bo, g);
    else if (*conv) run_convert_visdrone(vd, g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
