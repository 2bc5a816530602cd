// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance          run all
//   acceptance 5 7      run the listed criteria
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "oracles.hpp"
#include "tinybox/tinybox.hpp"

using namespace tinybox;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const char* names[] = {"IoU", "GIoU", "DIoU", "CIoU"};
  for (auto v : {OverlapVariant::IoU, OverlapVariant::GIoU, OverlapVariant::DIoU, OverlapVariant::CIoU}) {
    Rng rng(1000 + static_cast<int>(v));
    double worst = 0;
    for (int i = 0; i < 500; ++i) {
      const auto [p, t] = sample_pair(rng);
      const auto fd = central_difference(
          [&](const std::vector<double>& x) { return overlap_loss(BBox(x[0], x[1], x[2], x[3]), t, v).value; },
          {p.cx, p.cy, p.w, p.h}, 1e-5);
      worst = std::max(worst, relative_error(overlap_loss(p, t, v).grad, fd));
    }
    o.check(worst < 1e-4, std::string(names[static_cast<int>(v)]) + " " + fmt(worst));
    o.note(std::string(names[static_cast<int>(v)]) + " " + fmt(worst, 2));
  }
  {
    Rng rng(2000);
    double worst = 0;
    for (int i = 0; i < 500; ++i) {
      const auto [p, t] = sample_pair(rng);
      const auto fd = central_difference(
          [&](const std::vector<double>& x) { return nwd_loss(BBox(x[0], x[1], x[2], x[3]), t, 0.05).value; },
          {p.cx, p.cy, p.w, p.h}, 1e-5);
      worst = std::max(worst, relative_error(nwd_loss(p, t, 0.05).grad, fd));
    }
    o.check(worst < 1e-4, "NWD " + fmt(worst));
    o.note("NWD " + fmt(worst, 2));
  }
  for (double lam : {0.0, 0.5, 1.0}) {
    SalNwdConfig cfg;
    cfg.lambda = lam;
    const GradCheckReport r = sal_nwd_grad_check(cfg, 500, 3000, 1e-5);
    o.check(r.max_rel_error < 1e-4 && r.trials == 500, "hybrid lambda " + fmt(lam) + " " + fmt(r.max_rel_error));
    o.note("hybrid(lambda=" + fmt(lam) + ") " + fmt(r.max_rel_error, 2));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 10.0, "runtime " + fmt(secs));
  o.note("500 instances each, " + fmt(secs, 3) + " s");
  return o;
}

Outcome zero_gradient() {
  Outcome o;
  Rng rng(7);
  int exact_zero = 0, nwd_nonzero = 0;
  for (int i = 0; i < 100; ++i) {
    const auto [p, t] = sample_disjoint_pair(rng);
    const LossValue a = overlap_loss(p, t, OverlapVariant::IoU);
    exact_zero += a.grad[0] == 0.0 && a.grad[1] == 0.0;
    const LossValue b = nwd_loss(p, t, 0.05);
    nwd_nonzero += std::hypot(std::hypot(b.grad[0], b.grad[1]), std::hypot(b.grad[2], b.grad[3])) > 0.0;
  }
  o.check(exact_zero == 100, "IoU zero center grads " + std::to_string(exact_zero) + "/100");
  o.check(nwd_nonzero == 100, "NWD nonzero grads " + std::to_string(nwd_nonzero) + "/100");

  TrainSpec iou_spec;
  iou_spec.loss = TrainLoss::iou;
  const TrainTrace flat = toy_train(iou_spec);
  bool bitwise_flat = true;
  for (double v : flat.loss) bitwise_flat = bitwise_flat && v == flat.loss.front();
  o.check(bitwise_flat, "IoU trace not flat");

  TrainSpec hyb;
  const TrainTrace conv = toy_train(hyb);
  o.check(conv.final_center_error < 0.5 && conv.loss.size() <= 2000,
          "hybrid final center error " + fmt(conv.final_center_error));
  int first = -1;
  for (std::size_t i = 0; i < conv.center_error.size(); ++i)
    if (conv.center_error[i] < 0.5) {
      first = static_cast<int>(i);
      break;
    }
  o.note("IoU grads zero " + std::to_string(exact_zero) + "/100, NWD nonzero " + std::to_string(nwd_nonzero) +
         "/100; IoU trace flat at " + fmt(flat.loss.front()) + "; hybrid < 0.5 px at step " + std::to_string(first) +
         ", final " + fmt(conv.final_center_error, 3) + " px");
  return o;
}

Outcome nwd_values() {
  Outcome o;
  const double a = nwd(BBox(0, 0, 10, 10), BBox(3, 4, 10, 10), 12.8);
  const double a_ref = oracle::nwd_scalar(0, 0, 10, 10, 3, 4, 10, 10, 12.8);
  const double b = nwd(BBox(0, 0, 4, 4), BBox(0, 0, 8, 8), 12.8);
  const double b_ref = oracle::nwd_scalar(0, 0, 4, 4, 0, 0, 8, 8, 12.8);
  o.check(std::abs(a - std::exp(-5.0 / 12.8)) < 1e-9 && std::abs(a - a_ref) < 1e-9, "exp(-5/12.8)");
  o.check(std::abs(b - std::exp(-std::sqrt(8.0) / 12.8)) < 1e-9 && std::abs(b - b_ref) < 1e-9, "exp(-sqrt8/12.8)");
  o.check(std::abs(a - 0.6766) < 5e-5 && std::abs(b - 0.8017) < 5e-5, "rounded values");
  o.note("nwd " + fmt(a, 10) + " and " + fmt(b, 10));
  return o;
}

Outcome lambda_semantics() {
  Outcome o;
  const LambdaSweepResult r = lambda_sweep(LambdaScenario{}, {0.0, 0.25, 0.5, 0.75, 1.0});
  o.check(r.distant[0] > r.nearby[0], "lambda=0 distant > nearby");
  o.check(r.nearby[4] < 0.01 * r.nearby[0], "lambda=1 nearby < 1% of lambda=0");
  o.check(r.endpoints_ok, "endpoint collapse");
  // affinity on fixed random batches too
  Rng rng(44);
  double worst = r.max_affinity_error;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<BBox> p, t;
    for (int i = 0; i < 6; ++i) {
      const auto [a, b] = sample_pair(rng);
      p.push_back(a);
      t.push_back(b);
    }
    SalNwdConfig cfg;
    cfg.lambda = 0;
    const double t0 = sal_nwd_batch(p, t, cfg).total;
    cfg.lambda = 1;
    const double t1 = sal_nwd_batch(p, t, cfg).total;
    cfg.lambda = 0.5;
    worst = std::max(worst, std::abs(sal_nwd_batch(p, t, cfg).total - 0.5 * (t0 + t1)) / std::max(1.0, std::abs(t0)));
  }
  o.check(worst <= 1e-12, "affinity " + fmt(worst));
  o.note("lambda=0 nearby " + fmt(r.nearby[0]) + " distant " + fmt(r.distant[0]) + "; lambda=1 nearby " +
         fmt(r.nearby[4]) + "; affinity error " + fmt(worst, 2));
  return o;
}

Outcome theta_sensitivity() {
  Outcome o;
  const std::vector<double> thetas{0.10, 0.20, 0.30, 0.85};
  const SweepReport r = theta_sweep_random({64, 16, 3, 3}, thetas, 50, 0);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double mean = std::get<double>(r.rows[i][1]);
    const auto zeros = std::get<std::int64_t>(r.rows[i][4]);
    if (thetas[i] == 0.10) {
      o.check(mean >= 10.0 && mean <= 35.0, "theta 0.10 mean " + fmt(mean, 4) + "% outside [10, 35]");
    } else {
      o.check(zeros == 50, "theta " + fmt(thetas[i]) + " zero sparsity on " + std::to_string(zeros) + "/50 seeds");
    }
    o.note("theta " + fmt(thetas[i]) + ": mean " + fmt(mean, 4) + "%, range [" + fmt(std::get<double>(r.rows[i][2]), 4) +
           ", " + fmt(std::get<double>(r.rows[i][3]), 4) + "], zero on " + std::to_string(zeros) + "/50");
  }
  const SweepReport d = theta_sweep(duplicated_pair_bank({64, 16, 3, 3}, 0), {0.85});
  o.check(std::get<double>(d.rows[0][1]) == 50.0, "duplicated pairs");
  o.note("duplicated pairs " + fmt(std::get<double>(d.rows[0][1])) + "%");
  return o;
}

Outcome lazy_schedule() {
  Outcome o;
  const SparsityTrace t = simulate_convergence(DriftSpec{}, 0);
  std::size_t k1 = 99, k5 = 99, k10 = 99;
  for (std::size_t k = 0; k < t.intervals.size(); ++k) {
    if (t.intervals[k] == 1) k1 = k;
    if (t.intervals[k] == 5) k5 = k;
    if (t.intervals[k] == 10) k10 = k;
  }
  o.check(t.sparsity[k10][14] == 0.0, "N=10 at epoch 15 is " + fmt(t.sparsity[k10][14]));
  bool equal = true;
  for (int e = 25; e <= 50; ++e) equal = equal && t.sparsity[k10][e - 1] == t.sparsity[k5][e - 1];
  o.check(equal, "N=10 differs from N=5 after epoch 25");
  o.check(t.recompute_counts[k1] == 40 && t.recompute_counts[k5] == 8, "recompute counts");
  o.note("N=10@15 " + fmt(t.sparsity[k10][14]) + "%, N=5@15 " + fmt(t.sparsity[k5][14]) + "%, terminal " +
         fmt(t.sparsity[k5].back()) + "%; recomputations N=1 " + std::to_string(t.recompute_counts[k1]) + " vs N=5 " +
         std::to_string(t.recompute_counts[k5]));
  return o;
}

Outcome dsconv_flops() {
  Outcome o;
  const double r64 = flop_ratio(ConvSpec{64, 64, 3, 1, 1}, 320, 320);
  const double r128 = flop_ratio(ConvSpec{128, 128, 3, 1, 1}, 320, 320);
  o.check(std::abs(r64 - 9.0 * 64 * 64 / (9 * 64 + 64 * 64)) < 1e-12 && std::abs(r64 - 7.89) < 0.005, "C=64 ratio");
  o.check(std::abs(r128 - 147456.0 / 17536.0) < 1e-12 && std::abs(r128 - 8.41) < 0.005, "C=128 ratio");
  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 1 + rng.below(8), Co = 1 + rng.below(8), k = 1 + 2 * rng.below(3);
    DSConvParams p;
    p.depthwise = FilterBank({C, 1, k, k});
    for (auto& v : p.depthwise.storage()) v = rng.normal();
    p.depthwise_bias.resize(C);
    for (auto& v : p.depthwise_bias) v = rng.normal();
    p.pointwise = FilterBank({Co, C, 1, 1});
    for (auto& v : p.pointwise.storage()) v = rng.normal();
    p.pointwise_bias.resize(Co);
    for (auto& v : p.pointwise_bias) v = rng.normal();
    p.stride = 1 + rng.below(2);
    p.padding = k / 2;
    FeatureMap x({1 + rng.below(2), C, k + rng.below(8), k + rng.below(8)});
    for (auto& v : x.storage()) v = rng.normal();
    const FeatureMap a = depthwise_separable(x, p), b = oracle::two_stage_dsconv(x, p);
    if (a.shape() != b.shape()) {
      o.check(false, "shape");
      break;
    }
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.storage()[i] - b.storage()[i]));
  }
  o.check(worst <= 1e-5, "dsconv vs two-stage " + fmt(worst));
  o.note("ratio C=64 " + fmt(r64, 4) + ", C=128 " + fmt(r128, 4) + "; dsconv max |diff| " + fmt(worst, 2) +
         " over 100 tensors");
  return o;
}

Outcome evaluator_oracle() {
  Outcome o;
  int exact = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(40000 + s);
    std::vector<GroundTruth> g;
    std::vector<Detection> d;
    const int classes = 1 + static_cast<int>(rng.below(3));
    const int n_gt = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n_gt; ++i)
      g.push_back({rng.below(2) ? "a" : "b", static_cast<int>(rng.below(classes)),
                   BBox(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)),
                   false});
    const int n_det = static_cast<int>(rng.below(static_cast<std::uint64_t>(11 - n_gt)));
    for (int i = 0; i < n_det; ++i) {
      const GroundTruth& src = g[rng.below(g.size())];
      const double j = rng.uniform(0.0, 0.4) * src.box.w;
      d.push_back({src.image_id, rng.below(4) ? src.class_id : static_cast<int>(rng.below(classes)),
                   BBox(src.box.cx + rng.uniform(-j, j), src.box.cy + rng.uniform(-j, j),
                        src.box.w * rng.uniform(0.7, 1.3), src.box.h * rng.uniform(0.7, 1.3)),
                   std::round(rng.uniform() * 10) / 10});
    }
    const EvalResult r = map_eval(d, g);
    const oracle::MapResult ref = oracle::brute_map(d, g);
    exact += r.map50 == ref.map50 && r.map5095 == ref.map5095;
  }
  o.check(exact == 200, "oracle agreement " + std::to_string(exact) + "/200");

  const std::vector<GroundTruth> g{{"a", 0, BBox(0.2, 0.2, 0.1, 0.1), false}, {"a", 0, BBox(0.7, 0.7, 0.1, 0.1), false}};
  const std::vector<Detection> d{{"a", 0, BBox(0.2, 0.2, 0.1, 0.1), 0.9},
                                 {"a", 0, BBox(0.45, 0.45, 0.1, 0.1), 0.8},
                                 {"a", 0, BBox(0.7, 0.7, 0.1, 0.1), 0.7}};
  const double all_pts = average_precision(d, g, 0, 0.5, ApInterpolation::all_points);
  const double coco = average_precision(d, g, 0, 0.5, ApInterpolation::coco101);
  o.check(std::round(all_pts * 1e4) / 1e4 == 0.8333, "hand case " + fmt(all_pts));
  o.note("brute-force agreement " + std::to_string(exact) + "/200 (bitwise); hand case " + fmt(all_pts, 4) +
         " (area under envelope), " + fmt(coco, 4) + " with 101-point sampling");
  return o;
}

Outcome nms_tuner() {
  Outcome o;
  const Scene s = gen_crowded_duplicate_scene(0);
  const auto cells = grid_search_nms(s.detections, s.objects, {0.001, 0.005, 0.010, 0.050}, {0.4, 0.5, 0.6, 0.7});
  o.check(cells.front().iou <= 0.5, "best iou " + fmt(cells.front().iou));
  double best_high = 0;
  for (const auto& c : cells)
    if (c.iou > 0.5) best_high = std::max(best_high, c.map50);

  Rng rng(90);
  int idem = 0, mono = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Detection> d;
    const int n = static_cast<int>(rng.below(20));
    for (int i = 0; i < n; ++i)
      d.push_back({rng.below(2) ? "a" : "b", static_cast<int>(rng.below(2)),
                   BBox(rng.uniform(0.3, 0.5), rng.uniform(0.3, 0.5), rng.uniform(0.05, 0.15), rng.uniform(0.05, 0.15)),
                   rng.uniform()});
    const NmsConfig cfg{rng.uniform(0.0, 0.5), rng.uniform(0.2, 0.8)};
    const auto once = nms(d, cfg);
    idem += nms(once, cfg) == once;
    mono += nms(d, NmsConfig{cfg.conf_threshold + rng.uniform(0.0, 0.5), cfg.iou_threshold}).size() <= once.size();
  }
  o.check(idem == 1000 && mono == 1000, "idempotence " + std::to_string(idem) + ", monotonicity " + std::to_string(mono));
  o.note("best cell conf " + fmt(cells.front().conf) + " iou " + fmt(cells.front().iou) + " mAP50 " +
         fmt(cells.front().map50, 4) + " vs best at iou>0.5 " + fmt(best_high, 4) + "; idempotent " +
         std::to_string(idem) + "/1000, monotone " + std::to_string(mono) + "/1000");
  return o;
}

Outcome parser() {
  Outcome o;
  const std::string text = "684,8,273,116,0,0,0,0\n406,119,265,70,1,4,0,0\n255,22,119,128,1,5,1,2\n7,9,3,3,1,2\n";
  const auto recs = parse_visdrone_records(text);
  o.check(format_visdrone_records(recs) == text, "record round trip");
  const auto g = parse_visdrone_annotations("100,200,50,40,1,4,0,0\n", 1000, 800);
  o.check(g.size() == 1 && g[0].class_id == 3 && g[0].box.cx == 0.125 && g[0].box.cy == 0.275 &&
              g[0].box.w == 0.05 && g[0].box.h == 0.05,
          "hand-converted example");
  const fs::path ann = fs::temp_directory_path() / "tinybox_acceptance_ann.txt";
  write_text_file(ann, "100,200,50,40,1,4,0,0\n");
  const auto cli = cli::run("convert-visdrone --input " + ann.string() + " --width 1000 --height 800 --image-id img");
  o.check(cli.code == 0 &&
              cli.out == "{\"image_id\":\"img\",\"class_id\":3,\"cx\":0.125,\"cy\":0.275,\"w\":0.05,\"h\":0.05}\n",
          "CLI conversion: " + cli.out);
  struct Bad {
    std::string text;
    std::size_t line;
  };
  int ok = 0;
  const std::vector<Bad> bad{{"a,b,c", 1}, {"1,2,3,4,1,1,0,0\n1,2,3,4,1\n", 2}, {"1,2,3,4,1,1\n\n1,2,3,4,1,12\n", 3}};
  for (const auto& b : bad) {
    try {
      parse_visdrone_records(b.text);
    } catch (const MalformedLineError& e) {
      ok += e.line_no() == b.line;
    }
  }
  o.check(ok == static_cast<int>(bad.size()), "malformed line numbers");
  o.note("round trip exact; example -> class 3 (0.125, 0.275, 0.05, 0.05); malformed lines " + std::to_string(ok) + "/" +
         std::to_string(bad.size()) + " at the right line");
  return o;
}

std::string slurp_dir(const fs::path& dir) {
  std::string all;
  std::set<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
  for (const auto& f : files) all += f.filename().string() + "\n" + read_text_file(f);
  return all;
}

Outcome determinism() {
  Outcome o;
  const fs::path root = fs::temp_directory_path() / "tinybox_acceptance_det";
  fs::remove_all(root);
  const fs::path ann = root / "ann.txt";
  fs::create_directories(root);
  write_text_file(ann, "100,200,50,40,1,4,0,0\n3,4,17,9,1,1,0,0\n");
  const std::vector<std::string> commands{
      "loss-ablate --grad-trials 50",
      "prune-sim --seeds 5",
      "prune-sim --mode lazy",
      "nms-tune",
      "eval",
      "train-toy --steps 300",
      "msfd-budget",
      "convert-visdrone --input " + ann.string() + " --width 1000 --height 800",
  };
  int same = 0, total = 0;
  for (std::size_t c = 0; c < commands.size(); ++c)
    for (const char* format : {"csv", "json"}) {
      std::string outputs[2];
      for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / (std::to_string(c) + format + std::to_string(run));
        const auto r = cli::run("--seed 42 --format " + std::string(format) + " --out-dir " + dir.string() + " " +
                                commands[c]);
        outputs[run] = r.code == 0 && fs::exists(dir) ? slurp_dir(dir) : "exit " + std::to_string(r.code);
      }
      ++total;
      const bool ok = outputs[0] == outputs[1] && outputs[0].rfind("exit", 0) != 0;
      same += ok;
      o.check(ok, commands[c] + " (" + format + ")");
    }
  o.note(std::to_string(same) + "/" + std::to_string(total) + " subcommand/format runs byte-identical");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"zero-gradient reproduction", zero_gradient},
      {"NWD scalar values", nwd_values},
      {"lambda semantics", lambda_semantics},
      {"theta sensitivity", theta_sensitivity},
      {"lazy schedule", lazy_schedule},
      {"depthwise-separable FLOPs and equivalence", dsconv_flops},
      {"evaluator oracle equivalence", evaluator_oracle},
      {"NMS tuner", nms_tuner},
      {"VisDrone parser", parser},
      {"CLI determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.note(std::string("exception: ") + e.what());
    }
    failures += !out.pass;
    std::printf("%s  criterion %2d  %-42s %s\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                out.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
