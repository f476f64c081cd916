// Acceptance gate: one PASS/FAIL line per release-blocking property of the
// alignment laboratory. In-process checks exercise the library; everything
// with an external interface runs through the CLI binary named by INCLINE_BIN.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "incline/align.hpp"
#include "incline/corpus.hpp"
#include "incline/error.hpp"
#include "incline/eval.hpp"
#include "incline/intervene.hpp"
#include "incline/ioutil.hpp"
#include "incline/linalg.hpp"
#include "incline/model.hpp"
#include "incline/rng.hpp"

namespace fs = std::filesystem;
using namespace incline;

namespace {

std::string g_bin;
fs::path g_root;
int g_log_counter = 0;

struct CheckFail : std::runtime_error {
  explicit CheckFail(const std::string& what) : std::runtime_error(what) {}
};

void require(bool ok, const std::string& what) {
  if (!ok) throw CheckFail(what);
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

// --- subprocess plumbing -----------------------------------------------------

void cli(const std::string& args) {
  const fs::path log = g_root / ("log_" + std::to_string(g_log_counter++) + ".txt");
  const std::string cmd = "\"" + g_bin + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  const int rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (rc != 0) {
    std::string out = read_file(log.string());
    if (out.size() > 300) out = out.substr(out.size() - 300);
    throw CheckFail("command failed (exit " + std::to_string(rc) + "): incline " +
                    args.substr(0, 120) + " ... " + out);
  }
}

// --- report parsing ----------------------------------------------------------

struct Metrics {
  double accuracy = 0.0;
  std::vector<char> correct;  // per item, in file order
};

Metrics parse_metrics(const fs::path& path) {
  Metrics m;
  std::istringstream in(read_file(path.string()));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "accuracy") {
      ls >> m.accuracy;
    } else if (tag == "item") {
      int id = 0, gold = 0, pred = 0, correct = 0;
      std::string k1, k2, k3;
      ls >> id >> k1 >> gold >> k2 >> pred >> k3 >> correct;
      m.correct.push_back(static_cast<char>(correct));
    }
  }
  require(!m.correct.empty(), "no items in " + path.string());
  return m;
}

// the raw token is reused on later command lines so alpha stays bit-exact
std::string best_alpha_text(const fs::path& best_txt) {
  std::istringstream in(read_file(best_txt.string()));
  std::string tag, value;
  in >> tag >> value;
  require(tag == "best_alpha", "malformed " + best_txt.string());
  return value;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path.string()));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cells.push_back(cur);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double cpc_of(const std::vector<char>& a, const std::vector<char>& b) {
  require(a.size() == b.size() && !a.empty(), "consistency runs cover different item counts");
  double both = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) both += 1.0;
  }
  return both / static_cast<double>(a.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- small in-process helpers --------------------------------------------------

RepTable random_reps(const std::vector<SiteId>& sites, size_t n, size_t d, uint64_t seed) {
  RepTable table;
  uint64_t k = seed;
  for (const SiteId& site : sites) {
    CounterRng rng(k++);
    DenseMatrix m(n, d);
    for (auto& v : m.data) v = rng.normal();
    table[site] = std::move(m);
  }
  return table;
}

AlignmentSet identity_alignment(const ModelConfig& mc) {
  AlignmentSet set;
  set.src_lang = "b";
  set.tgt_lang = "a";
  for (const SiteId& site : all_sites(mc)) {
    SiteAlignment sa;
    sa.w = DenseMatrix::identity(static_cast<size_t>(mc.d_model));
    set.sites.emplace(site, sa);
  }
  return set;
}

// full-batch gradient descent on the same objective, as an independent oracle
DenseMatrix gd_least_squares(const DenseMatrix& s, const DenseMatrix& t, int steps, double lr) {
  const double n = static_cast<double>(s.rows);
  DenseMatrix g = gram(s);                      // SᵀS
  DenseMatrix c = transpose(crossprod(s, t));   // TᵀS
  for (auto& v : g.data) v /= n;
  for (auto& v : c.data) v /= n;
  DenseMatrix w(t.cols, s.cols);
  for (int step = 0; step < steps; ++step) {
    const DenseMatrix wg = matmul(w, g);
    for (size_t k = 0; k < w.data.size(); ++k) {
      w.data[k] -= lr * 2.0 * (wg.data[k] - c.data[k]);
    }
  }
  return w;
}

// ===== the shared transfer experiment (built by criterion 4) =====

struct MajorityLab {
  fs::path dir;
  std::string data;   // corpus directory
  std::string model;  // checkpoint path
  std::string align;  // alignment path
  std::string alpha;  // tuned alpha, verbatim token from best.txt
  fs::path ea, eb, ei;  // a_test baseline / b_test baseline / b_test intervened
  double acc_a = 0.0, acc_b0 = 0.0, acc_bi = 0.0;
};

std::optional<MajorityLab> g_maj;

const MajorityLab& majority() {
  if (!g_maj) throw CheckFail("transfer experiment unavailable (criterion 4 did not complete)");
  return *g_maj;
}

// ===== criteria =====

std::string c1_least_squares() {
  CounterRng seeds(2024);
  double worst_gap = -1.0;
  double worst_recovery = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const uint64_t base = seeds.below(1u << 30);
    CounterRng rng(base);
    DenseMatrix s(40, 16), t(40, 16), a(16, 16);
    for (auto& v : s.data) v = rng.normal();
    for (auto& v : t.data) v = rng.normal();
    for (auto& v : a.data) v = rng.normal();

    // closed form never loses to the oracle on the shared objective
    const LinearMapFit fit = fit_linear_map(s, t, 0.0);
    const double closed = mean_sq_residual(fit.w, s, t);
    const DenseMatrix wg = gd_least_squares(s, t, 2500, 0.05);
    const double oracle = mean_sq_residual(wg, s, t);
    worst_gap = std::max(worst_gap, closed - oracle);
    require(closed <= oracle + 1e-6,
            fmt("instance %d: closed-form residual %.3e exceeds oracle %.3e", inst, closed, oracle));

    // exact recovery when the targets really are a linear image of the sources
    const DenseMatrix t2 = matmul(s, transpose(a));
    const LinearMapFit exact = fit_linear_map(s, t2, 0.0);
    const double err = frobenius_distance(exact.w, a);
    worst_recovery = std::max(worst_recovery, err);
    require(err <= 1e-8, fmt("instance %d: map recovery error %.3e", inst, err));
  }
  return fmt("20 instances: worst oracle gap %.1e, worst recovery error %.1e", worst_gap,
             worst_recovery);
}

std::string c2_alpha_zero_noop() {
  // (a) bit-identical logits on 100 random prompts, fitted maps, alpha = 0
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq_len = 12;
  mc.seed = 9;
  const ToyTransformer model(mc);
  const auto sites = all_sites(mc);
  const AlignmentSet align =
      fit_alignment(random_reps(sites, 40, 16, 50), random_reps(sites, 40, 16, 90));

  InterventionConfig cfg;
  cfg.alpha = 0.0;
  cfg.site_kinds = {SiteKind::Hidden, SiteKind::AttnOutput, SiteKind::FfnOutput,
                    SiteKind::Embedding};
  const auto hook = make_interventor(&align, nullptr, cfg, mc);

  CounterRng rng(77);
  for (int i = 0; i < 100; ++i) {
    std::vector<int> prompt(3 + rng.below(10));
    for (auto& tok : prompt) tok = static_cast<int>(rng.below(40));
    const ForwardResult plain = model.forward(prompt);
    const ForwardResult hooked = model.forward(prompt, hook.get());
    require(plain.logits.rows == hooked.logits.rows && plain.logits.cols == hooked.logits.cols &&
                std::memcmp(plain.logits.data.data(), hooked.logits.data.data(),
                            plain.logits.data.size() * sizeof(double)) == 0,
            fmt("prompt %d: alpha 0 changed the logits", i));
  }

  // (b) the CLI writes byte-identical metrics with and without the idle hook
  const fs::path t = g_root / "noop";
  cli("gen-data --task majority --n-content 8 --seq-len 5 --n-train 40 --n-val 10 --n-test 10"
      " --n-parallel 12 --seed 7 --no-timestamp --out " + (t / "data").string());
  cli("train-model --data " + (t / "data/a_train.txt").string() +
      " --vocab 40 --d-model 8 --layers 2 --heads 2 --d-ff 16 --max-seq 8 --seed 5 --steps 5"
      " --batch 8 --no-timestamp --out " + (t / "model").string());
  cli("extract --model " + (t / "model/model.txt").string() + " --parallel " +
      (t / "data/parallel.txt").string() + " --no-timestamp --out " + (t / "reps").string());
  cli("fit-align --src " + (t / "reps/reps_src.txt").string() + " --tgt " +
      (t / "reps/reps_tgt.txt").string() + " --no-timestamp --out " + (t / "align").string());
  cli("eval --model " + (t / "model/model.txt").string() + " --data " +
      (t / "data/b_val.txt").string() + " --mode none --no-timestamp --out " +
      (t / "e_base").string());
  cli("eval --model " + (t / "model/model.txt").string() + " --data " +
      (t / "data/b_val.txt").string() + " --align " + (t / "align/align.txt").string() +
      " --alpha 0 --no-timestamp --out " + (t / "e_zero").string());
  require(read_file((t / "e_base/metrics.txt").string()) ==
              read_file((t / "e_zero/metrics.txt").string()),
          "metrics files differ between no-hook and alpha-0 runs");
  return "100 prompts bit-identical; metrics files byte-equal";
}

std::string c3_single_intervention() {
  ModelConfig mc;
  mc.vocab_size = 40;
  mc.d_model = 16;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.max_seq_len = 32;
  mc.seed = 13;
  const ToyTransformer model(mc);
  const AlignmentSet align = identity_alignment(mc);

  InterventionConfig cfg;
  cfg.alpha = 0.3;
  cfg.site_kinds = {SiteKind::Hidden, SiteKind::AttnOutput};
  const auto hook = make_interventor(&align, nullptr, cfg, mc);
  const long long expected =
      static_cast<long long>(selected_sites(cfg, mc).size());  // 2 kinds x 2 layers
  require(expected == 4, "expected 4 selected sites");

  CounterRng rng(31);
  std::vector<int> prompt(9);
  for (auto& tok : prompt) tok = static_cast<int>(rng.below(40));

  model.forward(prompt, hook.get());
  require(hook->applications() == expected,
          fmt("forward counted %lld, want %lld", hook->applications(), expected));

  hook->reset_counter();
  model.greedy_decode(prompt, 16, hook.get());
  require(hook->applications() == expected,
          fmt("16-token decode counted %lld, want %lld (prefix recomputation must not re-count)",
              hook->applications(), expected));

  hook->reset_counter();
  TaskDataset ds;
  ds.language = "b";
  for (int i = 0; i < 10; ++i) {
    TaskItem item;
    item.tokens.assign(9, 0);
    for (auto& tok : item.tokens) tok = static_cast<int>(rng.below(40));
    item.answer_position = 8;
    item.gold = i % 2;
    ds.items.push_back(std::move(item));
  }
  eval_task(model, ds, hook.get());
  require(hook->applications() == expected * 10,
          fmt("10-item eval counted %lld, want %lld", hook->applications(), expected * 10));
  return "4 sites: forward 4, 16-token decode 4, 10-item eval 40";
}

std::string c4_transfer() {
  MajorityLab lab;
  lab.dir = g_root / "maj";
  lab.data = (lab.dir / "data").string();
  cli("gen-data --task majority --seq-len 9 --n-content 8 --n-parallel 500 --seed 3"
      " --no-timestamp --out " + lab.data);
  cli("train-model --data " + lab.data + "/a_train.txt --max-seq 16 --seed 5 --steps 800"
      " --no-timestamp --out " + (lab.dir / "model").string());
  lab.model = (lab.dir / "model/model.txt").string();
  cli("extract --model " + lab.model + " --parallel " + lab.data + "/parallel.txt" +
      " --no-timestamp --out " + (lab.dir / "reps").string());
  cli("fit-align --src " + (lab.dir / "reps/reps_src.txt").string() + " --tgt " +
      (lab.dir / "reps/reps_tgt.txt").string() + " --no-timestamp --out " +
      (lab.dir / "align").string());
  lab.align = (lab.dir / "align/align.txt").string();

  lab.ea = lab.dir / "eval_a";
  lab.eb = lab.dir / "eval_b_base";
  lab.ei = lab.dir / "eval_b_incline";
  cli("eval --model " + lab.model + " --data " + lab.data + "/a_test.txt --no-timestamp --out " +
      lab.ea.string());
  cli("eval --model " + lab.model + " --data " + lab.data + "/b_test.txt --no-timestamp --out " +
      lab.eb.string());
  cli("grid-alpha --model " + lab.model + " --data " + lab.data + "/b_val.txt --align " +
      lab.align + " --no-timestamp --out " + (lab.dir / "grid").string());
  lab.alpha = best_alpha_text(lab.dir / "grid/best.txt");
  cli("eval --model " + lab.model + " --data " + lab.data + "/b_test.txt --align " + lab.align +
      " --alpha " + lab.alpha + " --no-timestamp --out " + lab.ei.string());

  lab.acc_a = parse_metrics(lab.ea / "metrics.txt").accuracy;
  lab.acc_b0 = parse_metrics(lab.eb / "metrics.txt").accuracy;
  lab.acc_bi = parse_metrics(lab.ei / "metrics.txt").accuracy;
  g_maj = lab;

  require(lab.acc_a >= 0.95, fmt("language-A accuracy %.3f < 0.95", lab.acc_a));
  require(lab.acc_b0 <= 0.60, fmt("language-B baseline %.3f > 0.60", lab.acc_b0));
  require(lab.acc_bi >= lab.acc_b0 + 0.20,
          fmt("language-B gain %+.3f < +0.20 (%.3f -> %.3f)", lab.acc_bi - lab.acc_b0, lab.acc_b0,
              lab.acc_bi));
  return fmt("A %.3f; B %.3f -> %.3f at alpha %.2f (gain %+.3f)", lab.acc_a, lab.acc_b0,
             lab.acc_bi, std::strtod(lab.alpha.c_str(), nullptr), lab.acc_bi - lab.acc_b0);
}

std::string c5_consistency() {
  const MajorityLab& lab = majority();
  const Metrics ma = parse_metrics(lab.ea / "metrics.txt");
  const Metrics mb = parse_metrics(lab.eb / "metrics.txt");
  const Metrics mi = parse_metrics(lab.ei / "metrics.txt");

  const double cpc_base = cpc_of(ma.correct, mb.correct);
  const double cpc_incline = cpc_of(ma.correct, mi.correct);
  require(cpc_base <= std::min(ma.accuracy, mb.accuracy) + 1e-12,
          "baseline consistency exceeds an accuracy");
  require(cpc_incline <= std::min(ma.accuracy, mi.accuracy) + 1e-12,
          "intervened consistency exceeds an accuracy");
  require(cpc_incline >= cpc_base + 0.10,
          fmt("consistency lift %+.3f < +0.10 (%.3f -> %.3f)", cpc_incline - cpc_base, cpc_base,
              cpc_incline));
  return fmt("consistency %.3f -> %.3f (lift %+.3f), bounded by min accuracy in both runs",
             cpc_base, cpc_incline, cpc_incline - cpc_base);
}

std::string c6_static_vs_dynamic() {
  const fs::path dir = g_root / "anti";
  const std::string data = (dir / "data").string();
  cli("gen-data --task antisym --seq-len 6 --n-content 8 --n-parallel 500 --seed 3"
      " --no-timestamp --out " + data);
  cli("train-model --data " + data + "/a_train.txt --max-seq 16 --seed 5 --steps 2500"
      " --no-timestamp --out " + (dir / "model").string());
  const std::string model = (dir / "model/model.txt").string();

  // the static baseline: class-contrastive steering on the intervention sites
  cli("extract --model " + model + " --data " + data + "/b_val.txt --class 0 --sites hidden"
      " --no-timestamp --out " + (dir / "r0").string());
  cli("extract --model " + model + " --data " + data + "/b_val.txt --class 1 --sites hidden"
      " --no-timestamp --out " + (dir / "r1").string());
  cli("fit-caa --src " + (dir / "r0/reps.txt").string() + " --tgt " +
      (dir / "r1/reps.txt").string() + " --no-timestamp --out " + (dir / "caa").string());

  // by construction the two classes share one bag-of-token distribution, so
  // the fitted mean differences must sit at sampling-noise scale: within three
  // standard errors of a zero mean difference, site by site
  const RepFile r0 = load_reps((dir / "r0/reps.txt").string());
  const RepFile r1 = load_reps((dir / "r1/reps.txt").string());
  double worst_ratio = 0.0;
  for (const auto& [site, a] : r0.reps) {
    const DenseMatrix& b = r1.reps.at(site);
    const double n0 = static_cast<double>(a.rows), n1 = static_cast<double>(b.rows);
    double norm_sq = 0.0, scatter = 0.0;
    for (size_t c = 0; c < a.cols; ++c) {
      double m0 = 0.0, m1 = 0.0;
      for (size_t r = 0; r < a.rows; ++r) m0 += a.at(r, c);
      for (size_t r = 0; r < b.rows; ++r) m1 += b.at(r, c);
      m0 /= n0;
      m1 /= n1;
      norm_sq += (m1 - m0) * (m1 - m0);
      for (size_t r = 0; r < a.rows; ++r) scatter += (a.at(r, c) - m0) * (a.at(r, c) - m0);
      for (size_t r = 0; r < b.rows; ++r) scatter += (b.at(r, c) - m1) * (b.at(r, c) - m1);
    }
    const double bound = 3.0 * std::sqrt((1.0 / n0 + 1.0 / n1) * scatter / (n0 + n1 - 2.0));
    worst_ratio = std::max(worst_ratio, std::sqrt(norm_sq) / bound);
    require(std::sqrt(norm_sq) <= bound,
            fmt("steering norm %.4f exceeds the 3-standard-error scale %.4f at %s %d",
                std::sqrt(norm_sq), bound, site_kind_name(site.kind), site.layer));
  }

  // both methods get the same tuning protocol: alpha on b_val, score on b_test
  cli("eval --model " + model + " --data " + data + "/b_test.txt --no-timestamp --out " +
      (dir / "eb").string());
  cli("grid-alpha --model " + model + " --data " + data + "/b_val.txt --caa " +
      (dir / "caa/caa.txt").string() + " --mode caa --no-timestamp --out " +
      (dir / "grid_caa").string());
  cli("eval --model " + model + " --data " + data + "/b_test.txt --caa " +
      (dir / "caa/caa.txt").string() + " --mode caa --alpha " +
      best_alpha_text(dir / "grid_caa/best.txt") + " --no-timestamp --out " +
      (dir / "ec").string());

  cli("extract --model " + model + " --parallel " + data + "/parallel.txt --no-timestamp --out " +
      (dir / "reps").string());
  cli("fit-align --src " + (dir / "reps/reps_src.txt").string() + " --tgt " +
      (dir / "reps/reps_tgt.txt").string() + " --no-timestamp --out " + (dir / "align").string());
  cli("grid-alpha --model " + model + " --data " + data + "/b_val.txt --align " +
      (dir / "align/align.txt").string() + " --no-timestamp --out " + (dir / "grid_inc").string());
  cli("eval --model " + model + " --data " + data + "/b_test.txt --align " +
      (dir / "align/align.txt").string() + " --alpha " +
      best_alpha_text(dir / "grid_inc/best.txt") + " --no-timestamp --out " +
      (dir / "ei").string());

  const double b0 = parse_metrics(dir / "eb/metrics.txt").accuracy;
  const double caa = parse_metrics(dir / "ec/metrics.txt").accuracy;
  const double inc = parse_metrics(dir / "ei/metrics.txt").accuracy;
  require(caa - b0 <= 0.05, fmt("static steering gain %+.3f > +0.05", caa - b0));
  require(inc - b0 >= 0.15, fmt("learned-map gain %+.3f < +0.15", inc - b0));
  require(inc >= caa + 0.10, fmt("separation %+.3f < +0.10", inc - caa));
  return fmt("B %.3f: learned maps %.3f vs static %.3f; steering norms at %.2f of the noise scale",
             b0, inc, caa, worst_ratio);
}

std::string c7_overhead() {
  const MajorityLab& lab = majority();
  const ToyTransformer model = ToyTransformer::load(lab.model);
  const AlignmentSet align = load_alignment(lab.align);
  const TaskDataset ds = load_dataset(lab.data + "/b_test.txt");

  InterventionConfig cfg;
  cfg.alpha = std::strtod(lab.alpha.c_str(), nullptr);
  const auto hook = make_interventor(&align, nullptr, cfg, model.config());

  auto latencies = [](const EvalResult& ev) {
    std::vector<double> out;
    out.reserve(ev.items.size());
    for (const auto& item : ev.items) out.push_back(item.latency_s);
    return out;
  };
  eval_task(model, ds);  // warm caches before timing anything
  const std::vector<double> base = latencies(eval_task(model, ds));
  const std::vector<double> with = latencies(eval_task(model, ds, hook.get()));
  require(base.size() >= 100, "need at least 100 items for the overhead medians");
  const double ratio = median(with) / median(base);
  require(ratio <= 1.25, fmt("intervened median latency is %.3fx the baseline", ratio));

  // the hook touches one position, so longer generations amortize identically
  ModelConfig mc;
  mc.seed = 5;  // defaults otherwise: d 32, 2 layers, vocab 96, max_seq 32
  const ToyTransformer gen_model(mc);
  const AlignmentSet identity = identity_alignment(mc);
  InterventionConfig gen_cfg;
  gen_cfg.alpha = 0.3;
  const auto gen_hook = make_interventor(&identity, nullptr, gen_cfg, mc);

  CounterRng rng(8);
  std::vector<std::vector<int>> prompts(60, std::vector<int>(9));
  for (auto& prompt : prompts) {
    for (auto& tok : prompt) tok = static_cast<int>(rng.below(96));
  }
  auto decode_median = [&](int n_new, const InterventionHook* h) {
    std::vector<double> times;
    times.reserve(prompts.size());
    for (const auto& prompt : prompts) {
      const auto t0 = std::chrono::steady_clock::now();
      gen_model.greedy_decode(prompt, n_new, h);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return median(times);
  };
  const double r4 = decode_median(4, gen_hook.get()) / decode_median(4, nullptr);
  const double r16 = decode_median(16, gen_hook.get()) / decode_median(16, nullptr);
  require(std::fabs(r4 - r16) <= 0.10,
          fmt("latency ratio drifts with length: %.3f at 4 tokens vs %.3f at 16", r4, r16));
  return fmt("median overhead %.3fx (<= 1.25x); decode ratio %.3f@4 vs %.3f@16 tokens", ratio, r4,
             r16);
}

std::string c8_site_ablation() {
  const MajorityLab& lab = majority();
  const fs::path out = g_root / "ablate_site";
  cli("ablate --which site --model " + lab.model + " --align " + lab.align + " --val " +
      lab.data + "/b_val.txt --test " + lab.data + "/b_test.txt --no-timestamp --out " +
      out.string());

  const auto rows = read_csv(out / "ablation.csv");
  require(rows.size() == 6, fmt("expected 6 csv rows, got %zu", rows.size()));
  const char* want[6] = {"site", "baseline", "hidden", "attn", "ffn", "emb"};
  for (int i = 0; i < 6; ++i) {
    require(rows[static_cast<size_t>(i)][0] == want[i],
            fmt("row %d is '%s', want '%s'", i, rows[static_cast<size_t>(i)][0].c_str(), want[i]));
  }
  require(read_file((out / "report.txt").string()).rfind("ablation v1 site", 0) == 0,
          "report header missing");

  std::string best_site;
  double best_acc = -1.0;
  double hidden_acc = 0.0;
  for (size_t i = 2; i < rows.size(); ++i) {
    const double acc = std::strtod(rows[i][1].c_str(), nullptr);
    if (rows[i][0] == "hidden") hidden_acc = acc;
    if (acc > best_acc) {
      best_acc = acc;
      best_site = rows[i][0];
    }
  }
  // which site wins is model-dependent; the gate only requires the sweep and
  // an explicit record of whether the residual stream came out on top
  return fmt("all four variants emitted; hidden argmax: %s (hidden %.3f, best %s %.3f)",
             best_site == "hidden" ? "yes" : "no", hidden_acc, best_site.c_str(), best_acc);
}

std::string c9_data_size() {
  const MajorityLab& lab = majority();
  const fs::path big = g_root / "maj2000";
  cli("gen-data --task majority --seq-len 9 --n-content 8 --n-parallel 2000 --seed 3"
      " --no-timestamp --out " + big.string());
  const fs::path out = g_root / "ablate_size";
  cli("ablate --which datasize --model " + lab.model + " --parallel " +
      (big / "parallel.txt").string() + " --val " + lab.data + "/b_val.txt --test " + lab.data +
      "/b_test.txt --sizes 50,100,200,500,1000,2000 --no-timestamp --out " + out.string());

  const auto rows = read_csv(out / "ablation.csv");
  require(rows.size() == 8, fmt("expected 8 csv rows, got %zu", rows.size()));
  require(rows[0][0] == "n_pairs" && rows[0][1] == "seconds" && rows[0][2] == "accuracy",
          "unexpected csv header");
  std::vector<double> n, secs;
  for (size_t i = 2; i < rows.size(); ++i) {  // skip header and the unfitted baseline row
    n.push_back(std::strtod(rows[i][0].c_str(), nullptr));
    secs.push_back(std::strtod(rows[i][1].c_str(), nullptr));
    const double acc = std::strtod(rows[i][2].c_str(), nullptr);
    require(acc >= 0.0 && acc <= 1.0, "accuracy column out of range");
  }
  for (size_t i = 1; i < secs.size(); ++i) {
    require(secs[i] >= secs[i - 1],
            fmt("fit time fell from %.3fs at %g pairs to %.3fs at %g", secs[i - 1], n[i - 1],
                secs[i], n[i]));
  }
  const double slope = (secs[1] - secs[0]) / (n[1] - n[0]);
  double worst = 1.0;
  for (size_t i = 2; i < secs.size(); ++i) {
    const double predicted = secs[0] + slope * (n[i] - n[0]);
    const double ratio = secs[i] / predicted;
    worst = std::max(worst, std::max(ratio, 1.0 / ratio));
    require(ratio <= 2.0 && ratio >= 0.5,
            fmt("fit time %.3fs at %g pairs is %.2fx the linear extrapolation %.3fs", secs[i],
                n[i], ratio, predicted));
  }
  return fmt("fit seconds non-decreasing over 50..2000 pairs, within %.2fx of linear", worst);
}

std::string c10_probe() {
  const MajorityLab& lab = majority();
  const fs::path dir = g_root / "probe";
  cli("extract --model " + lab.model + " --data " + lab.data + "/a_val.txt --sites hidden"
      " --no-timestamp --out " + (dir / "ra").string());
  cli("extract --model " + lab.model + " --data " + lab.data + "/b_val.txt --sites hidden"
      " --no-timestamp --out " + (dir / "rb").string());
  cli("probe --src " + (dir / "rb/reps.txt").string() + " --tgt " + (dir / "ra/reps.txt").string() +
      " --align " + lab.align + " --alpha " + lab.alpha + " --no-timestamp --out " +
      (dir / "out").string());

  double w1w2 = 1.0, acc1 = 0.0;
  {
    std::istringstream in(read_file((dir / "out/probe.txt").string()));
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "w1_dot_w2") ls >> w1w2;
      if (tag == "acc1_heldout") ls >> acc1;
    }
  }
  require(std::fabs(w1w2) <= 1e-8, fmt("probes not orthogonal: w1.w2 = %.2e", w1w2));
  require(acc1 >= 0.95, fmt("language probe held-out accuracy %.3f < 0.95", acc1));

  // centroids in probe coordinates: 0 = source, 1 = target, 2 = mapped source
  double cx[3] = {0, 0, 0}, cy[3] = {0, 0, 0}, cn[3] = {0, 0, 0};
  const auto rows = read_csv(dir / "out/points.csv");
  for (size_t i = 1; i < rows.size(); ++i) {
    const int label = std::atoi(rows[i][2].c_str());
    require(label >= 0 && label <= 2, "unexpected point label");
    cx[label] += std::strtod(rows[i][0].c_str(), nullptr);
    cy[label] += std::strtod(rows[i][1].c_str(), nullptr);
    cn[label] += 1.0;
  }
  for (int l = 0; l < 3; ++l) {
    require(cn[l] > 0, fmt("no points with label %d", l));
    cx[l] /= cn[l];
    cy[l] /= cn[l];
  }
  const double d_raw = std::hypot(cx[0] - cx[1], cy[0] - cy[1]);
  const double d_mapped = std::hypot(cx[2] - cx[1], cy[2] - cy[1]);
  require(d_mapped < d_raw,
          fmt("mapped centroid distance %.4f not below raw %.4f", d_mapped, d_raw));
  return fmt("w1.w2 %.1e; probe-1 held-out %.3f; centroid gap %.3f -> %.3f after mapping", w1w2,
             acc1, d_raw, d_mapped);
}

std::string c11_determinism() {
  const MajorityLab& lab = majority();
  const fs::path dir = g_root / "rerun";
  const std::string data = (dir / "data").string();
  cli("gen-data --task majority --seq-len 9 --n-content 8 --n-parallel 500 --seed 3"
      " --no-timestamp --out " + data);
  cli("train-model --data " + data + "/a_train.txt --max-seq 16 --seed 5 --steps 800"
      " --no-timestamp --out " + (dir / "model").string());
  const std::string model = (dir / "model/model.txt").string();
  cli("extract --model " + model + " --parallel " + data + "/parallel.txt --no-timestamp --out " +
      (dir / "reps").string());
  cli("fit-align --src " + (dir / "reps/reps_src.txt").string() + " --tgt " +
      (dir / "reps/reps_tgt.txt").string() + " --no-timestamp --out " + (dir / "align").string());
  cli("grid-alpha --model " + model + " --data " + data + "/b_val.txt --align " +
      (dir / "align/align.txt").string() + " --no-timestamp --out " + (dir / "grid").string());
  cli("eval --model " + model + " --data " + data + "/b_test.txt --no-timestamp --out " +
      (dir / "eval_b_base").string());
  cli("eval --model " + model + " --data " + data + "/b_test.txt --align " +
      (dir / "align/align.txt").string() + " --alpha " + best_alpha_text(dir / "grid/best.txt") +
      " --no-timestamp --out " + (dir / "eval_b_incline").string());

  const std::pair<std::string, std::string> files[] = {
      {lab.data + "/a_train.txt", data + "/a_train.txt"},
      {lab.data + "/a_val.txt", data + "/a_val.txt"},
      {lab.data + "/a_test.txt", data + "/a_test.txt"},
      {lab.data + "/b_val.txt", data + "/b_val.txt"},
      {lab.data + "/b_test.txt", data + "/b_test.txt"},
      {lab.data + "/parallel.txt", data + "/parallel.txt"},
      {lab.model, model},
      {(lab.dir / "model/losses.csv").string(), (dir / "model/losses.csv").string()},
      {(lab.dir / "reps/reps_src.txt").string(), (dir / "reps/reps_src.txt").string()},
      {(lab.dir / "reps/reps_tgt.txt").string(), (dir / "reps/reps_tgt.txt").string()},
      {lab.align, (dir / "align/align.txt").string()},
      {(lab.dir / "grid/grid.csv").string(), (dir / "grid/grid.csv").string()},
      {(lab.dir / "grid/best.txt").string(), (dir / "grid/best.txt").string()},
      {(lab.eb / "metrics.txt").string(), (dir / "eval_b_base/metrics.txt").string()},
      {(lab.ei / "metrics.txt").string(), (dir / "eval_b_incline/metrics.txt").string()},
  };
  int compared = 0;
  for (const auto& [first, second] : files) {
    require(read_file(first) == read_file(second), "rerun differs: " + second);
    ++compared;
  }

  // every artifact format round-trips bit-exactly through parse + serialize
  const std::string model_text = read_file(lab.model);
  require(ToyTransformer::deserialize(model_text).serialize() == model_text,
          "checkpoint round-trip not bit-exact");
  const std::string align_text = read_file(lab.align);
  require(serialize_alignment(parse_alignment(align_text)) == align_text,
          "alignment round-trip not bit-exact");
  const std::string ds_text = read_file(lab.data + "/b_test.txt");
  require(serialize_dataset(parse_dataset(ds_text)) == ds_text,
          "dataset round-trip not bit-exact");
  const std::string par_text = read_file(lab.data + "/parallel.txt");
  require(serialize_parallel(parse_parallel(par_text)) == par_text,
          "parallel-corpus round-trip not bit-exact");
  const std::string reps_text = read_file((lab.dir / "reps/reps_src.txt").string());
  const RepFile reps = parse_reps(reps_text);
  require(serialize_reps(reps.reps, reps.lang, reps.model_digest) == reps_text,
          "representation-file round-trip not bit-exact");
  const RepFile tgt = load_reps((lab.dir / "reps/reps_tgt.txt").string());
  const std::string caa_text = serialize_steering(fit_caa(reps.reps, tgt.reps));
  require(serialize_steering(parse_steering(caa_text)) == caa_text,
          "steering round-trip not bit-exact");
  return fmt("%d artifacts byte-identical across a full rerun; 6 formats round-trip bit-exact",
             compared);
}

}  // namespace

int main() {
  const char* bin = std::getenv("INCLINE_BIN");
  if (bin != nullptr) g_bin = bin;
  g_root = fs::temp_directory_path() / "incline_acceptance";
  std::error_code ec;
  fs::remove_all(g_root, ec);
  fs::create_directories(g_root, ec);

  struct Criterion {
    int id;
    const char* what;
    double budget_s;
    std::function<std::string()> fn;
  };
  const Criterion criteria[] = {
      {1, "closed-form alignment is least-squares optimal and exact on linear data", 5,
       c1_least_squares},
      {2, "alpha 0 intervention is a bit-identical no-op", 10, c2_alpha_zero_noop},
      {3, "intervention fires exactly once per site per item", 5, c3_single_intervention},
      {4, "intervention lifts language-B accuracy in the transfer experiment", 300, c4_transfer},
      {5, "cross-language consistency rises and stays bounded by accuracy", 300, c5_consistency},
      {6, "learned maps beat static steering when class means carry no signal", 300,
       c6_static_vs_dynamic},
      {7, "intervention overhead is small and independent of generated length", 120, c7_overhead},
      {8, "site ablation emits all four variants and records the best site", 600, c8_site_ablation},
      {9, "alignment fit time grows linearly with parallel-corpus size", 300, c9_data_size},
      {10, "orthogonal probes separate languages and mapped states move closer", 60, c10_probe},
      {11, "the full pipeline is deterministic and formats round-trip", 600, c11_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    std::string verdict = "PASS";
    std::string detail;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (g_bin.empty()) throw CheckFail("INCLINE_BIN not set");
      detail = criterion.fn();
    } catch (const std::exception& e) {
      verdict = "FAIL";
      detail = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (verdict == "PASS" && secs > criterion.budget_s) {
      verdict = "FAIL";
      detail = fmt("runtime %.1fs exceeds the %.0fs budget; ", secs, criterion.budget_s) + detail;
    }
    if (verdict == "FAIL") ++failures;
    std::printf("%s criterion %d: %s — %s [%.1fs]\n", verdict.c_str(), criterion.id,
                criterion.what, detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/11 passed\n", 11 - failures);
  return failures == 0 ? 0 : 1;
}
