// Acceptance suite: one PASS/FAIL line per criterion C1..C10.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scanet/cpe.hpp"
#include "scanet/cpg.hpp"
#include "scanet/eval.hpp"
#include "scanet/model.hpp"
#include "scanet/numkern/attention.hpp"
#include "scanet/numkern/grad_check.hpp"
#include "scanet/numkern/gumbel.hpp"
#include "scanet/scene_complexity.hpp"
#include "scanet/synthetic.hpp"
#include "scanet/trainer.hpp"
#include "test_util.hpp"

using namespace scanet;
using nk::Array;
using nk::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor scalar(double v, bool grad = false) { return Tensor(Array::scalar(v), grad); }

// ------------------------------------------------------------------ C1

Outcome c1_removal_oracle() {
  const auto corpus = load_corpus(testing::data_path("worked_example_corpus.jsonl"));
  const auto sc = estimate("v1", corpus);
  const bool fixture = sc.alpha == 2 && !sc.trace.empty() && sc.trace.front().degree == 3;

  NounSet chain;
  chain.elements = {{"a", "b"}, {"b", "c"}, {"c", "d"}};
  chain.provenance = {"q0", "q1", "q2"};
  const auto reduced = remove_redundancy(chain);

  return {fixture && reduced.size() == 2,
          format("fixture alpha=%zu first removal degree=%zu; chain -> %zu", sc.alpha,
                 sc.trace.empty() ? std::size_t{0} : sc.trace.front().degree, reduced.size())};
}

// ------------------------------------------------------------------ C2

Outcome c2_complexity_exactness() {
  SyntheticSpec s;
  s.n_videos = 100;
  s.redundancy_rate = 0.3;
  s.seed = 11;
  auto [corpus, oracle] = generate_synthetic(s);
  std::size_t exact = 0;
  for (const auto& pv : oracle.videos) exact += estimate(pv.video_id, corpus).alpha == pv.scene_count();
  const double rate = static_cast<double>(exact) / static_cast<double>(oracle.videos.size());
  return {rate >= 0.95, format("%zu/%zu videos exact (%.3f, need >= 0.95)", exact, oracle.videos.size(), rate)};
}

// ------------------------------------------------------------------ C3

/// Distance of every region endpoint to a frame boundary and of every width
/// to its clamp bounds, in frames. Central differences straddling one of
/// these points compare against a different branch, so such draws are
/// skipped rather than counted.
double mask_margin(const cpg::ProposalSet& s, std::size_t n, double w_min) {
  double margin = 1.0;
  for (const auto& m : s.masks) {
    for (double e : {n * (m.c - m.w / 2), n * (m.c + m.w / 2)}) margin = std::min(margin, std::abs(e - std::round(e)));
    margin = std::min({margin, std::abs(m.w - w_min) * n, std::abs(1.0 - m.w) * n});
  }
  return margin;
}

struct GradFamily {
  const char* name;
  // Returns the max relative error, or nullopt when the draw sits on a kink.
  std::function<std::optional<double>(std::uint64_t)> check;
};

std::optional<double> grad_attention(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t heads = 1 + rng.index(2);
  const std::size_t d = 2 * heads * (1 + rng.index(2));
  const std::size_t len = 1 + rng.index(6);
  nk::ParamStore store;
  auto b = nk::AttentionBlock::create(store, "blk", d, heads, d + 2, rng);
  for (auto& [name, t] : store.entries()) {
    const_cast<Tensor&>(t).mutable_value().add_scaled(nk::normal_array(t.rows(), t.cols(), 0.1, rng));
  }
  Tensor x(nk::normal_array(len, d, 1.0, rng), true);
  Tensor w = nk::constant(nk::normal_array(len, d, 1.0, rng));
  auto params = store.entries();
  params.emplace_back("x", x);
  return nk::grad_check([&] { return nk::sum(nk::mul(nk::attention_forward(b, x), w)); }, params).max_rel_error;
}

std::optional<double> grad_layer_norm(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t rows = 1 + rng.index(5), d = 2 + rng.index(7);
  Tensor x(nk::normal_array(rows, d, 1.0, rng), true);
  Tensor g(nk::normal_array(1, d, 1.0, rng), true);
  Tensor be(nk::normal_array(1, d, 1.0, rng), true);
  Tensor w = nk::constant(nk::normal_array(rows, d, 1.0, rng));
  return nk::grad_check([&] { return nk::sum_squares(nk::mul(nk::layer_norm(x, g, be), w)); },
                        {{"x", x}, {"g", g}, {"b", be}})
      .max_rel_error;
}

std::optional<double> grad_masks(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t dim = 4, n = 5 + rng.index(5), p_min = 2, p_max = 2 + rng.index(3);
  nk::ParamStore store;
  auto cb = cpg::Codebook::create(store, "codebook", 3, dim, rng);
  auto block = nk::AttentionBlock::create(store, "cpg", dim, 2, dim, rng);
  auto sel = cpg::CountSelector::create(store, "count", dim, p_min, p_max, rng);
  auto reg = cpg::SlotRegressor::create(store, "reg", dim, p_max, 0.2, rng);
  reg.w.mutable_value().add_scaled(nk::normal_array(reg.w.rows(), reg.w.cols(), 0.5, rng));
  const cpg::ProposalParams params{&sel, &reg, 8.0, 1.0};
  Tensor v = nk::constant(nk::normal_array(n, dim, 1.0, rng));
  Tensor q = nk::constant(nk::normal_array(2 + rng.index(3), dim, 1.0, rng));
  Tensor r = nk::constant(nk::normal_array(n, dim, 1.0, rng));
  auto run = [&] {
    Rng noise(seed);
    auto inter = cpg::interact(block, cpg::complexity_vector(2, cb), v, q);
    return cpg::build_proposals(inter.v, inter.z, params, noise, cpg::CountMode::Soft);
  };
  if (mask_margin(run(), n, reg.w_min) < 0.02) return std::nullopt;
  auto f = [&] {
    auto set = run();
    Tensor total = scalar(0.0);
    for (std::size_t p = 0; p < set.features.size(); ++p) {
      total = nk::add(total, nk::mul(nk::element(set.slot_weights, 0, p), nk::sum(nk::mul(set.features[p], r))));
    }
    return total;
  };
  return nk::grad_check(f, store).max_rel_error;
}

std::optional<double> grad_losses(std::uint64_t seed) {
  Rng rng(seed + 77);
  RunConfig cfg;
  cfg.seed = seed;
  cfg.d_model = 4;
  cfg.n_heads = 2;
  cfg.ffn_dim = 4;
  cfg.K = 3;
  cfg.p_min = 2;
  cfg.p_max = 3;
  cfg.w_min = 0.2;
  const std::size_t n = 5 + rng.index(4), fdim = 2 + rng.index(3);
  std::vector<VideoRecord> videos;
  for (int v = 0; v < 3; ++v) {
    VideoRecord rec{"v" + std::to_string(v), static_cast<double>(n), n, fdim, {}};
    for (std::size_t i = 0; i < n * fdim; ++i) rec.features.push_back(static_cast<float>(rng.normal()));
    videos.push_back(rec);
  }
  const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
  const Vocab vocab = Vocab::build(words);
  QueryRecord query{"q", "v0", {}, {}, {}};
  const std::size_t len = 2 + rng.index(4);
  for (std::size_t i = 0; i < len; ++i) {
    query.tokens.push_back(words[rng.index(words.size())]);
    query.pos_tags.push_back(i == 0 ? PosTag::Noun : (rng.bernoulli(0.5) ? PosTag::Verb : PosTag::Other));
  }
  Model m = Model::create(cfg, fdim, vocab);
  auto run = [&] {
    Rng r(seed * 31 + 5);
    return pair_losses(m, videos[0], query, 2, {&videos[1], &videos[2]}, r,
                       PairOptions{cpg::CountMode::Soft, false});
  };
  const auto probe = run();
  if (mask_margin(probe.proposals, n, cfg.w_min) < 0.02) return std::nullopt;
  const auto& rep = probe.report;
  for (const Tensor* hinge : {&rep.l_vid, &rep.l_cps}) {
    if (hinge->item() > 0.0 && hinge->item() < 1e-3) return std::nullopt;
  }
  return nk::grad_check([&] { return run().report.total; }, m.store).max_rel_error;
}

Outcome c3_gradients() {
  const std::vector<GradFamily> families = {{"attention", grad_attention},
                                            {"layer_norm", grad_layer_norm},
                                            {"masks", grad_masks},
                                            {"losses", grad_losses}};
  bool pass = true;
  std::string detail;
  for (const auto& fam : families) {
    std::size_t checked = 0, skipped = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; checked < 50 && seed < 500; ++seed) {
      const auto err = fam.check(seed);
      if (!err) {
        ++skipped;
        continue;
      }
      worst = std::max(worst, *err);
      ++checked;
    }
    pass = pass && checked == 50 && worst < 1e-4;
    detail += format("%s worst %.2e over %zu seeds (%zu near kinks skipped); ", fam.name, worst, checked, skipped);
  }
  return {pass, detail.substr(0, detail.size() - 2)};
}

// ------------------------------------------------------------------ C4

Outcome c4_mask_properties() {
  Rng rng(404);
  const double sigma = 8.0;
  double worst_formula = 0.0;
  std::size_t bad_flat = 0, bad_peak = 0;
  for (int t = 0; t < 1000; ++t) {
    const double c = rng.uniform(0.0, 1.0);
    const double w = rng.uniform(0.05, 1.0);
    const std::size_t n = 2 + rng.index(120);
    Tensor base = cpg::base_mask(scalar(c), scalar(w), sigma, n);
    const double sd = w / sigma;
    for (std::size_t k = 0; k < n; ++k) {
      const double x = static_cast<double>(k + 1) / static_cast<double>(n) - c;
      const double ref = 1.0 / (std::sqrt(2.0 * M_PI) * sd) * std::exp(-x * x / (2.0 * sd * sd));
      worst_formula = std::max(worst_formula, std::abs(base.value()[k] - ref) / std::max(1.0, ref));
    }
    const auto pm = cpg::flatten_and_normalize(base, c, w, n);
    double mx = 0.0;
    for (double v : pm.mask.value().values()) mx = std::max(mx, v);
    // Zero variance means every in-region value is the same double.
    bool flat = true;
    for (std::size_t k = pm.st; k <= pm.ed; ++k) flat = flat && pm.mask.value()[k] == pm.mask.value()[pm.st];
    bad_flat += !flat;
    bad_peak += mx != 1.0;
  }
  return {worst_formula <= 1e-12 && bad_flat == 0 && bad_peak == 0,
          format("max formula error %.2e, in-region variance nonzero in %zu, peak != 1 in %zu of 1000", worst_formula,
                 bad_flat, bad_peak)};
}

// ------------------------------------------------------------------ C5

Outcome c5_gumbel() {
  Rng rng(505);
  const std::size_t n = 10;
  const int draws = 10000;
  Tensor logits(Array(1, n, 0.0), true);
  std::vector<int> counts(n, 0);
  std::size_t not_one_hot = 0;
  for (int i = 0; i < draws; ++i) {
    const auto s = nk::gumbel_softmax(logits, 1.0, rng);
    int ones = 0, zeros = 0;
    for (double v : s.output.value().values()) {
      ones += v == 1.0;
      zeros += v == 0.0;
    }
    not_one_hot += !(ones == 1 && zeros == static_cast<int>(n) - 1 && s.output.value()[s.index] == 1.0);
    ++counts[s.index];
  }
  const double p = 1.0 / n, sd = std::sqrt(p * (1 - p) / draws);
  double worst_z = 0.0;
  for (int c : counts) worst_z = std::max(worst_z, std::abs(c / static_cast<double>(draws) - p) / sd);

  // Count selection with the default range over random selectors and inputs.
  const RunConfig defaults;
  std::size_t lo = 1000, hi = 0;
  for (int t = 0; t < 200; ++t) {
    nk::ParamStore store;
    auto sel = cpg::CountSelector::create(store, "count", 8, defaults.p_min, defaults.p_max, rng);
    sel.b2.mutable_value().add_scaled(nk::normal_array(1, sel.n(), 3.0, rng));
    Tensor z = nk::constant(nk::normal_array(1, 8, 2.0, rng));
    for (int k = 0; k < 25; ++k) {
      const auto mode = k % 3 == 0 ? cpg::CountMode::Argmax : cpg::CountMode::Sample;
      const auto s = cpg::select_count(z, sel, defaults.tau, rng, mode);
      lo = std::min(lo, s.p_alpha);
      hi = std::max(hi, s.p_alpha);
    }
  }
  const bool pass = worst_z <= 3.0 && not_one_hot == 0 && lo >= 5 && hi <= 14;
  return {pass, format("max |freq - 0.1| = %.2f sd, %zu non-one-hot outputs, p_alpha in [%zu, %zu]", worst_z,
                       not_one_hot, lo, hi)};
}

// ------------------------------------------------------------------ C6

Outcome c6_hinge_calibration() {
  const RunConfig d;
  bool pass = true;
  std::string detail;
  for (double delta : {d.delta1, d.delta2}) {
    const double satisfied = cpe::margin_hinge(scalar(1.0), scalar(1.0 + delta + 0.3), delta).item();
    const double equal = cpe::margin_hinge(scalar(2.5), scalar(2.5), delta).item();
    pass = pass && satisfied == 0.0 && equal == delta;
    detail += format("delta %.1f: satisfied %.3g equal %.17g; ", delta, satisfied, equal);
  }
  const double w2 = cpe::calibration_weight(2.0, d.gamma);
  bool monotone = true;
  for (std::size_t a = 1; a < d.K; ++a) {
    monotone = monotone && cpe::calibration_weight(a, d.gamma) < cpe::calibration_weight(a + 1.0, d.gamma);
  }
  pass = pass && std::abs(w2 - 0.4404) <= 1e-4 && monotone;
  detail += format("weight(2, 0.5) = %.6f, monotone %s", w2, monotone ? "yes" : "no");
  return {pass, detail};
}

// ------------------------------------------------------------------ C7

Outcome c7_metrics() {
  Rng rng(707);
  auto spans = [&](std::size_t k) {
    std::vector<Span> out;
    for (std::size_t i = 0; i < k; ++i) {
      const double a = rng.uniform() * 30.0, b = rng.uniform() * 30.0;
      out.push_back({std::min(a, b), std::max(a, b)});
    }
    return out;
  };
  std::size_t violations = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t q = 1 + rng.index(30);
    std::vector<std::vector<Span>> preds;
    for (std::size_t i = 0; i < q; ++i) preds.push_back(spans(1 + rng.index(8)));
    const auto gts = spans(q);
    for (std::size_t n = 1; n <= 5; ++n) {
      double prev = 1.0;
      for (int mi = 0; mi <= 20; ++mi) {
        const double m = mi / 20.0;
        const double r = eval::recall_at(preds, gts, n, m);
        violations += r > prev;
        if (n > 1) violations += r < eval::recall_at(preds, gts, n - 1, m);
        prev = r;
      }
    }
  }
  const double overlap = eval::iou({2, 6}, {4, 8});
  const bool oracle = std::abs(overlap - 1.0 / 3.0) <= 1e-9 && eval::iou({2, 6}, {2, 6}) == 1.0 &&
                      eval::iou({0, 1}, {3, 4}) == 0.0;
  return {violations == 0 && oracle,
          format("%zu monotonicity violations over 200 sets; iou([2,6],[4,8]) = %.10f", violations, overlap)};
}

// ------------------------------------------------------------ C8 .. C10

/// Fixed before any run was made: the default configuration with seed 1 on a
/// 200-video corpus with 1..5 scenes per video and 30% duplicated scenes.
SyntheticSpec full_run_corpus() {
  SyntheticSpec s;
  s.n_videos = 200;
  s.scenes_min = 1;
  s.scenes_max = 5;
  s.duplicate_scene_rate = 0.3;
  s.seed = 7;
  return s;
}

RunConfig full_run_config() {
  RunConfig c;
  c.seed = 1;
  return c;
}

struct Artifacts {
  std::string stage1_manifest, stage1_blob, stage2_manifest, stage2_blob, predictions, summary, heatmap;
  bool operator==(const Artifacts&) const = default;
};

struct FullRun {
  double untrained = 0, stage1 = 0, stage2 = 0, fixed6 = 0, seconds = 0;
  Artifacts artifacts;
};

FullRun full_run(const AnnotationCorpus& corpus, const OracleAnnotations& oracle, const std::string& dir) {
  const auto t0 = Clock::now();
  auto r1 = [&](const Model& m, const char* strategy) {
    return eval::build_report(eval::predict(m, corpus, eval::parse_strategy(strategy)), corpus, strategy,
                              eval::SceneSource::Oracle, &oracle);
  };
  FullRun out;
  Model m = init_model(full_run_config(), corpus);
  out.untrained = r1(m, "adaptive").r_at(1, 0.3);
  train_two_stage(m, corpus, [&](const Model& s1) {
    save_checkpoint(s1, dir + "/stage1.ckpt");
    out.stage1 = r1(s1, "adaptive").r_at(1, 0.3);
  });
  save_checkpoint(m, dir + "/stage2.ckpt");
  const auto report = r1(m, "adaptive");
  out.stage2 = report.r_at(1, 0.3);
  out.fixed6 = r1(m, "fixed:6").r_at(1, 0.3);
  out.seconds = seconds_since(t0);
  out.artifacts = {testing::read_text(dir + "/stage1.ckpt"), testing::read_text(dir + "/stage1.ckpt.bin"),
                   testing::read_text(dir + "/stage2.ckpt"), testing::read_text(dir + "/stage2.ckpt.bin"),
                   eval::predictions_csv(report),            eval::summary_json(report).dump(),
                   eval::heatmap_csv(report.heatmap)};
  return out;
}

void report(const char* id, const Outcome& o, double seconds, double budget) {
  const bool pass = o.pass && seconds < budget;
  std::printf("%s %s  %s  [%.1f s, budget %.0f s]\n", id, pass ? "PASS" : "FAIL", o.detail.c_str(), seconds, budget);
  std::fflush(stdout);
}

}  // namespace

int main() {
  struct Quick {
    const char* id;
    Outcome (*run)();
    double budget;
  };
  const Quick quick[] = {{"C1", c1_removal_oracle, 1},       {"C2", c2_complexity_exactness, 10},
                         {"C3", c3_gradients, 60},            {"C4", c4_mask_properties, 5},
                         {"C5", c5_gumbel, 10},               {"C6", c6_hinge_calibration, 1},
                         {"C7", c7_metrics, 5}};
  int failures = 0;
  auto record = [&](const char* id, const Outcome& o, double seconds, double budget) {
    report(id, o, seconds, budget);
    failures += !(o.pass && seconds < budget);
  };
  for (const auto& q : quick) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = q.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    record(q.id, o, seconds_since(t0), q.budget);
  }

  try {
    const auto [corpus, oracle] = generate_synthetic(full_run_corpus());
    testing::TempDir dir_a, dir_b;
    const auto a = full_run(corpus, oracle, dir_a.path().string());
    const double gain_untrained = a.stage2 - a.untrained, gain_fixed = a.stage2 - a.fixed6;
    record("C8",
           {gain_untrained >= 0.05 && gain_fixed >= 0.05,
            format("R@1,IoU=0.3 trained %.4f, untrained %.4f (+%.4f), fixed:6 %.4f (+%.4f); need +0.05 each",
                   a.stage2, a.untrained, gain_untrained, a.fixed6, gain_fixed)},
           a.seconds, 600);
    record("C9",
           {a.stage2 >= a.stage1 - 0.02,
            format("R@1,IoU=0.3 stage 1 %.4f, stage 2 %.4f (k=%zu, duplicate rate 0.3)", a.stage1, a.stage2,
                   full_run_config().k)},
           a.seconds, 600);
    const auto b = full_run(corpus, oracle, dir_b.path().string());
    record("C10",
           {a.artifacts == b.artifacts,
            format("stage checkpoints, predictions, summary and heatmap %s across two runs",
                   a.artifacts == b.artifacts ? "byte-identical" : "DIFFER")},
           a.seconds + b.seconds, 1200);
  } catch (const std::exception& e) {
    for (const char* id : {"C8", "C9", "C10"}) record(id, {false, std::string("exception: ") + e.what()}, 0, 1);
  }
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
