// incline — command-line laboratory for cross-lingual representation
// alignment: generate bilingual corpora, train the toy model, extract
// representations, fit alignment maps / steering vectors, evaluate
// interventions, sweep alpha, run ablations and export probe projections.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "incline/align.hpp"
#include "incline/corpus.hpp"
#include "incline/error.hpp"
#include "incline/eval.hpp"
#include "incline/intervene.hpp"
#include "incline/ioutil.hpp"
#include "incline/model.hpp"

namespace {

using namespace incline;

constexpr const char* kToolVersion = "incline 0.1.0";

// Collects outputs in memory and lands them (plus a manifest) in one pass at
// the end, so a failing run leaves no partial files behind. The manifest is
// written last: its presence marks a completed run.
class RunOutput {
 public:
  RunOutput(std::string subcommand, std::string out_dir, bool no_timestamp)
      : subcommand_(std::move(subcommand)),
        out_dir_(std::move(out_dir)),
        no_timestamp_(no_timestamp),
        start_(std::chrono::steady_clock::now()) {}

  void flag(const std::string& name, const std::string& value) { flags_[name] = value; }
  void flag(const std::string& name, long long value) { flags_[name] = std::to_string(value); }
  void flag(const std::string& name, int value) { flags_[name] = std::to_string(value); }
  void flag(const std::string& name, double value) { flags_[name] = format_real(value); }
  void flag(const std::string& name, bool value) { flags_[name] = value ? "1" : "0"; }

  // digests an input file into the manifest
  void input(const std::string& path) { inputs_[path] = digest_hex(read_file(path)); }

  void file(const std::string& name, std::string content) {
    staged_.emplace_back(name, std::move(content));
  }

  void commit() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    if (ec) {
      throw Error(ErrorCode::Io, "cannot create output directory " + out_dir_ + ": " + ec.message());
    }
    for (const auto& [name, content] : staged_) {
      write_file_atomic((fs::path(out_dir_) / name).string(), content);
    }
    write_file_atomic((fs::path(out_dir_) / "manifest.txt").string(), manifest_text());
  }

 private:
  std::string manifest_text() const {
    std::string out = "manifest v1\n";
    out += std::string("tool ") + kToolVersion + "\n";
    out += "command " + subcommand_ + "\n";
    for (const auto& [k, v] : flags_) out += "flag " + k + " " + v + "\n";
    for (const auto& [k, v] : inputs_) out += "input " + k + " " + v + "\n";
    if (!no_timestamp_) {
      char buf[32];
      const std::time_t now = std::time(nullptr);
      std::tm tm{};
      gmtime_r(&now, &tm);
      std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
      out += std::string("timestamp ") + buf + "\n";
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      out += "walltime " + format_real(secs) + "\n";
    }
    return out;
  }

  std::string subcommand_;
  std::string out_dir_;
  bool no_timestamp_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> flags_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::pair<std::string, std::string>> staged_;
};

// --- flag parsing helpers ----------------------------------------------------

std::vector<std::string> split_on(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

std::set<SiteKind> parse_sites_flag(const std::string& text) {
  if (text == "all") {
    return {SiteKind::Hidden, SiteKind::AttnOutput, SiteKind::FfnOutput, SiteKind::Embedding};
  }
  std::set<SiteKind> kinds;
  for (const auto& part : split_on(text, ',')) {
    if (part.empty()) throw Error(ErrorCode::InvalidArgument, "empty site kind in --sites");
    kinds.insert(parse_site_kind(part));
  }
  return kinds;
}

std::set<int> parse_layers_flag(const std::string& text) {
  std::set<int> layers;
  if (text == "all") return layers;  // empty = every layer
  for (const auto& part : split_on(text, ',')) {
    try {
      size_t used = 0;
      const int layer = std::stoi(part, &used);
      if (used != part.size() || layer < 0) throw std::invalid_argument(part);
      layers.insert(layer);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad layer '" + part + "' in --layers");
    }
  }
  if (layers.empty()) throw Error(ErrorCode::InvalidArgument, "--layers must name at least one layer");
  return layers;
}

GridSpec parse_grid_flag(const std::string& text) {
  const auto parts = split_on(text, ':');
  if (parts.size() != 3) {
    throw Error(ErrorCode::InvalidArgument, "grid must be lo:hi:step, got '" + text + "'");
  }
  GridSpec grid;
  double* slots[3] = {&grid.lo, &grid.hi, &grid.step};
  for (int i = 0; i < 3; ++i) {
    const char* begin = parts[static_cast<size_t>(i)].c_str();
    char* end = nullptr;
    *slots[i] = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
      throw Error(ErrorCode::InvalidArgument, "grid must be lo:hi:step, got '" + text + "'");
    }
  }
  return grid;
}

std::vector<int> parse_sizes_flag(const std::string& text) {
  std::vector<int> sizes;
  for (const auto& part : split_on(text, ',')) {
    try {
      size_t used = 0;
      const int n = std::stoi(part, &used);
      if (used != part.size() || n < 1) throw std::invalid_argument(part);
      sizes.push_back(n);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad size '" + part + "' in --sizes");
    }
  }
  return sizes;
}

int resolve_threads(int flag_value) {
  if (flag_value < 0) throw Error(ErrorCode::InvalidArgument, "--threads must be >= 0");
  if (flag_value > 0) return flag_value;
  const char* env = std::getenv("INCLINE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) {
    throw Error(ErrorCode::InvalidArgument,
                std::string("INCLINE_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(v);
}

// --- report builders ----------------------------------------------------------

std::string metrics_text(const EvalResult& ev) {
  std::string out = "metrics v1\n";
  out += "language " + ev.language + "\n";
  out += "n " + std::to_string(ev.items.size()) + "\n";
  out += "accuracy " + format_real(ev.accuracy) + "\n";
  for (const auto& item : ev.items) {
    out += "item " + std::to_string(item.id) + " gold " + std::to_string(item.gold) + " pred " +
           std::to_string(item.predicted) + " correct " + (item.correct ? "1" : "0") + "\n";
  }
  return out;
}

std::string latency_csv(const EvalResult& ev) {
  std::string out = "item,seconds\n";
  std::vector<double> latencies;
  latencies.reserve(ev.items.size());
  for (const auto& item : ev.items) {
    out += std::to_string(item.id) + "," + format_real(item.latency_s) + "\n";
    latencies.push_back(item.latency_s);
  }
  std::sort(latencies.begin(), latencies.end());
  const size_t n = latencies.size();
  const double median =
      n == 0 ? 0.0 : (n % 2 == 1 ? latencies[n / 2] : 0.5 * (latencies[n / 2 - 1] + latencies[n / 2]));
  out += "median," + format_real(median) + "\n";
  return out;
}

// --- shared intervention-flag plumbing -----------------------------------------

struct HookFlags {
  std::string model_path;
  std::string align_path;
  std::string caa_path;
  std::string mode = "auto";
  double alpha = 1.0;
  std::string sites = "hidden";
  std::string layers = "all";
};

void add_hook_flags(CLI::App* cmd, HookFlags& f) {
  cmd->add_option("--model", f.model_path, "model checkpoint")->required()->capture_default_str();
  cmd->add_option("--align", f.align_path, "alignment maps (incline mode)")->capture_default_str();
  cmd->add_option("--caa", f.caa_path, "steering vectors (caa mode)")->capture_default_str();
  cmd->add_option("--mode", f.mode, "intervention mode: incline|caa|none|auto")
      ->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "blend strength in [-1,1]")->capture_default_str();
  cmd->add_option("--sites", f.sites, "site kinds: comma list of hidden,attn,ffn,emb or 'all'")
      ->capture_default_str();
  cmd->add_option("--layers", f.layers, "layer indices: comma list or 'all'")
      ->capture_default_str();
}

struct HookSetup {
  ToyTransformer model;
  AlignmentSet alignment;
  SteeringSet steering;
  InterventionConfig config;
  std::unique_ptr<Interventor> hook;  // null when mode resolves to none
};

HookSetup build_hook(const HookFlags& f, RunOutput& run) {
  HookSetup s{ToyTransformer::load(f.model_path), {}, {}, {}, nullptr};
  run.input(f.model_path);

  std::string mode = f.mode;
  if (mode == "auto") {
    mode = !f.align_path.empty() ? "incline" : (!f.caa_path.empty() ? "caa" : "none");
  }
  s.config.mode = parse_intervention_mode(mode);
  s.config.alpha = f.alpha;
  s.config.site_kinds = parse_sites_flag(f.sites);
  s.config.layers = parse_layers_flag(f.layers);

  if (s.config.mode == InterventionMode::Incline) {
    if (f.align_path.empty()) {
      throw Error(ErrorCode::InvalidArgument, "mode incline requires --align");
    }
    s.alignment = load_alignment(f.align_path, s.model.digest());
    run.input(f.align_path);
  } else if (s.config.mode == InterventionMode::Caa) {
    if (f.caa_path.empty()) throw Error(ErrorCode::InvalidArgument, "mode caa requires --caa");
    s.steering = load_steering(f.caa_path);
    run.input(f.caa_path);
  }
  if (s.config.mode != InterventionMode::None) {
    s.hook = make_interventor(&s.alignment, &s.steering, s.config, s.model.config());
  }
  run.flag("mode", mode);
  run.flag("alpha", f.alpha);
  run.flag("sites", f.sites);
  run.flag("layers", f.layers);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for inference-time cross-lingual alignment interventions"};
  app.require_subcommand(1);

  try {
    // ---------------- gen-data ----------------
    struct {
      std::string task = "majority", domain = "task", out;
      BilingualSpec spec;
      bool no_timestamp = false;
      int threads = 0;
    } gd;
    {
      auto* cmd = app.add_subcommand("gen-data", "generate a bilingual synthetic corpus");
      cmd->add_option("--task", gd.task, "task kind: majority|antisym")->capture_default_str();
      cmd->add_option("--domain", gd.domain, "parallel-text domain: task|shifted")
          ->capture_default_str();
      cmd->add_option("--n-content", gd.spec.n_content_tokens, "content tokens per language pool")
          ->capture_default_str();
      cmd->add_option("--seq-len", gd.spec.seq_len, "prompt length in tokens")
          ->capture_default_str();
      cmd->add_option("--n-train", gd.spec.n_train, "training items (language A)")
          ->capture_default_str();
      cmd->add_option("--n-val", gd.spec.n_val, "validation items per language")
          ->capture_default_str();
      cmd->add_option("--n-test", gd.spec.n_test, "test items per language")->capture_default_str();
      cmd->add_option("--n-parallel", gd.spec.n_parallel, "parallel sentence pairs")
          ->capture_default_str();
      cmd->add_option("--seed", gd.spec.mapping_seed, "corpus seed")->capture_default_str();
      cmd->add_option("--out", gd.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", gd.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", gd.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&gd] {
        RunOutput run("gen-data", gd.out, gd.no_timestamp);
        gd.spec.task = parse_task_kind(gd.task);
        if (gd.domain == "task") gd.spec.domain = DomainTag::TaskDomain;
        else if (gd.domain == "shifted") gd.spec.domain = DomainTag::ShiftedDomain;
        else throw Error(ErrorCode::InvalidArgument, "--domain must be task or shifted");
        run.flag("task", gd.task);
        run.flag("domain", gd.domain);
        run.flag("n-content", gd.spec.n_content_tokens);
        run.flag("seq-len", gd.spec.seq_len);
        run.flag("n-train", gd.spec.n_train);
        run.flag("n-val", gd.spec.n_val);
        run.flag("n-test", gd.spec.n_test);
        run.flag("n-parallel", gd.spec.n_parallel);
        run.flag("seed", static_cast<long long>(gd.spec.mapping_seed));
        run.flag("threads", resolve_threads(gd.threads));

        const BilingualData data = gen_bilingual(gd.spec);
        run.file("a_train.txt", serialize_dataset(data.a_train));
        run.file("a_val.txt", serialize_dataset(data.a_val));
        run.file("a_test.txt", serialize_dataset(data.a_test));
        run.file("b_val.txt", serialize_dataset(data.b_val));
        run.file("b_test.txt", serialize_dataset(data.b_test));
        run.file("parallel.txt", serialize_parallel(data.parallel));
        run.commit();
      });
    }

    // ---------------- train-model ----------------
    struct {
      std::string data, out;
      ModelConfig mc;
      TrainConfig tc;
      bool no_timestamp = false;
      int threads = 0;
    } tm;
    {
      auto* cmd = app.add_subcommand("train-model", "train the toy decoder on a task corpus");
      cmd->add_option("--data", tm.data, "training corpus file")->required();
      cmd->add_option("--vocab", tm.mc.vocab_size, "vocabulary size")->capture_default_str();
      cmd->add_option("--d-model", tm.mc.d_model, "model width")->capture_default_str();
      cmd->add_option("--layers", tm.mc.n_layers, "transformer layers")->capture_default_str();
      cmd->add_option("--heads", tm.mc.n_heads, "attention heads")->capture_default_str();
      cmd->add_option("--d-ff", tm.mc.d_ff, "feed-forward width")->capture_default_str();
      cmd->add_option("--max-seq", tm.mc.max_seq_len, "maximum sequence length")
          ->capture_default_str();
      cmd->add_option("--seed", tm.mc.seed, "init seed")->capture_default_str();
      cmd->add_flag("--tied", tm.mc.tied, "tie output projection to embeddings");
      cmd->add_option("--steps", tm.tc.steps, "training steps")->capture_default_str();
      cmd->add_option("--lr", tm.tc.lr, "learning rate")->capture_default_str();
      cmd->add_option("--batch", tm.tc.batch_size, "batch size")->capture_default_str();
      cmd->add_option("--out", tm.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", tm.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", tm.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&tm] {
        RunOutput run("train-model", tm.out, tm.no_timestamp);
        run.input(tm.data);
        run.flag("vocab", tm.mc.vocab_size);
        run.flag("d-model", tm.mc.d_model);
        run.flag("layers", tm.mc.n_layers);
        run.flag("heads", tm.mc.n_heads);
        run.flag("d-ff", tm.mc.d_ff);
        run.flag("max-seq", tm.mc.max_seq_len);
        run.flag("seed", static_cast<long long>(tm.mc.seed));
        run.flag("tied", tm.mc.tied);
        run.flag("steps", tm.tc.steps);
        run.flag("lr", tm.tc.lr);
        run.flag("batch", tm.tc.batch_size);
        run.flag("threads", resolve_threads(tm.threads));

        const TaskDataset ds = load_dataset(tm.data);
        const ToyTransformer init(tm.mc);
        TrainResult tr = train(init, ds.items, tm.tc);
        run.file("model.txt", tr.model.serialize());
        std::string losses = "step,loss\n";
        for (size_t i = 0; i < tr.losses.size(); ++i) {
          losses += std::to_string(i) + "," + format_real(tr.losses[i]) + "\n";
        }
        run.file("losses.csv", losses);
        run.commit();
      });
    }

    // ---------------- extract ----------------
    struct {
      std::string model, parallel, data, sites = "all", out;
      int gold_class = -1;
      bool no_timestamp = false;
      int threads = 0;
    } ex;
    {
      auto* cmd = app.add_subcommand("extract", "extract last-token representations");
      cmd->add_option("--model", ex.model, "model checkpoint")->required();
      auto* par = cmd->add_option("--parallel", ex.parallel,
                                  "parallel corpus: writes reps_src.txt and reps_tgt.txt");
      auto* dat =
          cmd->add_option("--data", ex.data, "task corpus: writes reps.txt (prompt tokens only)");
      par->excludes(dat);
      cmd->add_option("--class", ex.gold_class,
                      "with --data: keep only items of this gold class (0 or 1)")
          ->capture_default_str();
      cmd->add_option("--sites", ex.sites, "site kinds to record: comma list or 'all'")
          ->capture_default_str();
      cmd->add_option("--out", ex.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", ex.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", ex.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&ex] {
        RunOutput run("extract", ex.out, ex.no_timestamp);
        const ToyTransformer model = ToyTransformer::load(ex.model);
        run.input(ex.model);
        run.flag("sites", ex.sites);
        run.flag("class", ex.gold_class);
        run.flag("threads", resolve_threads(ex.threads));

        const std::set<SiteKind> kinds = parse_sites_flag(ex.sites);
        std::vector<SiteId> sites;
        for (const auto& site : all_sites(model.config())) {
          if (kinds.count(site.kind)) sites.push_back(site);
        }
        const std::string digest = model.digest();

        if (!ex.parallel.empty()) {
          const ParallelCorpus pc = load_parallel(ex.parallel);
          run.input(ex.parallel);
          std::vector<std::vector<int>> src, tgt;
          for (const auto& [s, t] : pc.pairs) {
            src.push_back(s);
            tgt.push_back(t);
          }
          run.file("reps_src.txt", serialize_reps(extract_reps(model, src, sites), pc.src_lang, digest));
          run.file("reps_tgt.txt", serialize_reps(extract_reps(model, tgt, sites), pc.tgt_lang, digest));
        } else if (!ex.data.empty()) {
          const TaskDataset ds = load_dataset(ex.data);
          run.input(ex.data);
          if (ex.gold_class != -1 && ex.gold_class != 0 && ex.gold_class != 1) {
            throw Error(ErrorCode::InvalidArgument, "--class must be 0 or 1");
          }
          std::vector<std::vector<int>> sentences;
          for (const auto& item : ds.items) {
            if (ex.gold_class >= 0 &&
                item.gold != ds.answer_tokens[static_cast<size_t>(ex.gold_class)]) {
              continue;
            }
            sentences.push_back(item.tokens);
          }
          if (sentences.empty()) {
            throw Error(ErrorCode::InvalidDataset, "no items left after --class filtering");
          }
          run.file("reps.txt", serialize_reps(extract_reps(model, sentences, sites), ds.language, digest));
        } else {
          throw Error(ErrorCode::InvalidArgument, "extract needs --parallel or --data");
        }
        run.commit();
      });
    }

    // ---------------- fit-align ----------------
    struct {
      std::string src, tgt, out;
      double ridge = 0.0;
      bool no_timestamp = false;
      int threads = 0;
    } fa;
    {
      auto* cmd = app.add_subcommand("fit-align", "fit per-site linear alignment maps");
      cmd->add_option("--src", fa.src, "source-language representation file")->required();
      cmd->add_option("--tgt", fa.tgt, "target-language representation file")->required();
      cmd->add_option("--ridge", fa.ridge, "ridge strength, 0 = escalate only when degenerate")
          ->capture_default_str();
      cmd->add_option("--out", fa.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", fa.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", fa.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&fa] {
        RunOutput run("fit-align", fa.out, fa.no_timestamp);
        run.input(fa.src);
        run.input(fa.tgt);
        run.flag("ridge", fa.ridge);
        run.flag("threads", resolve_threads(fa.threads));

        const RepFile src = load_reps(fa.src);
        const RepFile tgt = load_reps(fa.tgt);
        if (!src.model_digest.empty() && !tgt.model_digest.empty() &&
            src.model_digest != tgt.model_digest) {
          throw Error(ErrorCode::InvalidArgument,
                      "representation files come from different models");
        }
        AlignmentSet set = fit_alignment(src.reps, tgt.reps, fa.ridge);
        set.src_lang = src.lang;
        set.tgt_lang = tgt.lang;
        set.model_digest = src.model_digest.empty() ? tgt.model_digest : src.model_digest;
        run.file("align.txt", serialize_alignment(set));
        run.commit();
      });
    }

    // ---------------- fit-caa ----------------
    struct {
      std::string src, tgt, out;
      bool no_timestamp = false;
      int threads = 0;
    } fc;
    {
      auto* cmd = app.add_subcommand("fit-caa", "fit mean-difference steering vectors");
      cmd->add_option("--src", fc.src, "negative/source representation file")->required();
      cmd->add_option("--tgt", fc.tgt, "positive/target representation file")->required();
      cmd->add_option("--out", fc.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", fc.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", fc.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&fc] {
        RunOutput run("fit-caa", fc.out, fc.no_timestamp);
        run.input(fc.src);
        run.input(fc.tgt);
        run.flag("threads", resolve_threads(fc.threads));
        const RepFile src = load_reps(fc.src);
        const RepFile tgt = load_reps(fc.tgt);
        run.file("caa.txt", serialize_steering(fit_caa(src.reps, tgt.reps)));
        run.commit();
      });
    }

    // ---------------- eval ----------------
    struct {
      HookFlags hook;
      std::string data, out;
      bool no_timestamp = false;
      int threads = 0;
    } ev;
    {
      auto* cmd = app.add_subcommand("eval", "evaluate task accuracy with/without intervention");
      add_hook_flags(cmd, ev.hook);
      cmd->add_option("--data", ev.data, "task corpus to score")->required();
      cmd->add_option("--out", ev.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", ev.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", ev.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&ev] {
        RunOutput run("eval", ev.out, ev.no_timestamp);
        run.flag("threads", resolve_threads(ev.threads));
        HookSetup s = build_hook(ev.hook, run);
        const TaskDataset ds = load_dataset(ev.data);
        run.input(ev.data);
        const EvalResult result = eval_task(s.model, ds, s.hook.get());
        run.file("metrics.txt", metrics_text(result));
        run.file("latency.csv", latency_csv(result));
        run.commit();
      });
    }

    // ---------------- grid-alpha ----------------
    struct {
      HookFlags hook;
      std::string data, grid = "-1:1:0.1", out;
      bool no_timestamp = false;
      int threads = 0;
    } ga;
    {
      auto* cmd = app.add_subcommand("grid-alpha", "sweep alpha on a validation corpus");
      add_hook_flags(cmd, ga.hook);
      cmd->add_option("--data", ga.data, "validation corpus")->required();
      cmd->add_option("--grid", ga.grid, "alpha grid lo:hi:step")->capture_default_str();
      cmd->add_option("--out", ga.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", ga.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", ga.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&ga] {
        RunOutput run("grid-alpha", ga.out, ga.no_timestamp);
        run.flag("threads", resolve_threads(ga.threads));
        run.flag("grid", ga.grid);
        ga.hook.alpha = 0.0;  // per-point alphas come from the grid
        HookSetup s = build_hook(ga.hook, run);
        if (s.config.mode == InterventionMode::None) {
          throw Error(ErrorCode::InvalidArgument, "grid-alpha needs --align or --caa");
        }
        const TaskDataset ds = load_dataset(ga.data);
        run.input(ga.data);
        const GridResult gr = grid_search_alpha(s.model, ds, &s.alignment, &s.steering, s.config,
                                                parse_grid_flag(ga.grid));
        run.file("grid.csv", grid_csv(gr));
        run.file("best.txt", "best_alpha " + format_real(gr.best_alpha) + "\nbest_accuracy " +
                                 format_real(gr.best_accuracy) + "\n");
        run.commit();
      });
    }

    // ---------------- ablate ----------------
    struct {
      std::string which, model, align, parallel, parallel_shifted, val, test, out;
      std::string sizes = "50,100,200,500,1000,2000";
      std::string grid = "-1:1:0.1";
      bool no_timestamp = false;
      int threads = 0;
    } ab;
    {
      auto* cmd = app.add_subcommand("ablate", "run a site/layer/datasize/domain sweep");
      cmd->add_option("--which", ab.which, "axis: site|layer|datasize|domain")->required();
      cmd->add_option("--model", ab.model, "model checkpoint")->required();
      cmd->add_option("--align", ab.align, "alignment maps (site/layer axes)");
      cmd->add_option("--parallel", ab.parallel, "parallel corpus (datasize/domain axes)");
      cmd->add_option("--parallel-shifted", ab.parallel_shifted,
                      "shifted-domain parallel corpus (domain axis)");
      cmd->add_option("--val", ab.val, "validation corpus for alpha selection")->required();
      cmd->add_option("--test", ab.test, "test corpus for reported accuracy")->required();
      cmd->add_option("--sizes", ab.sizes, "datasize axis: comma list of pair counts")
          ->capture_default_str();
      cmd->add_option("--grid", ab.grid, "alpha grid lo:hi:step")->capture_default_str();
      cmd->add_option("--out", ab.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", ab.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", ab.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&ab] {
        RunOutput run("ablate", ab.out, ab.no_timestamp);
        run.flag("which", ab.which);
        run.flag("grid", ab.grid);
        run.flag("threads", resolve_threads(ab.threads));
        const ToyTransformer model = ToyTransformer::load(ab.model);
        run.input(ab.model);
        const TaskDataset val = load_dataset(ab.val);
        const TaskDataset test = load_dataset(ab.test);
        run.input(ab.val);
        run.input(ab.test);
        const GridSpec grid = parse_grid_flag(ab.grid);

        AblationTable table;
        if (ab.which == "site" || ab.which == "layer") {
          if (ab.align.empty()) {
            throw Error(ErrorCode::InvalidArgument, "--which " + ab.which + " requires --align");
          }
          const AlignmentSet alignment = load_alignment(ab.align, model.digest());
          run.input(ab.align);
          table = ab.which == "site" ? ablate_sites(model, alignment, val, test, grid)
                                     : ablate_layers(model, alignment, val, test, grid);
        } else if (ab.which == "datasize") {
          if (ab.parallel.empty()) {
            throw Error(ErrorCode::InvalidArgument, "--which datasize requires --parallel");
          }
          const ParallelCorpus pc = load_parallel(ab.parallel);
          run.input(ab.parallel);
          run.flag("sizes", ab.sizes);
          table = ablate_data_size(model, pc, parse_sizes_flag(ab.sizes), val, test, grid);
        } else if (ab.which == "domain") {
          if (ab.parallel.empty() || ab.parallel_shifted.empty()) {
            throw Error(ErrorCode::InvalidArgument,
                        "--which domain requires --parallel and --parallel-shifted");
          }
          const ParallelCorpus pc = load_parallel(ab.parallel);
          const ParallelCorpus pcs = load_parallel(ab.parallel_shifted);
          run.input(ab.parallel);
          run.input(ab.parallel_shifted);
          table = ablate_domain(model, pc, pcs, val, test, grid);
        } else {
          throw Error(ErrorCode::InvalidArgument,
                      "--which must be site, layer, datasize or domain");
        }
        run.file("ablation.csv", ablation_csv(table));
        run.file("report.txt", ablation_report(table));
        run.commit();
      });
    }

    // ---------------- probe ----------------
    struct {
      std::string src, tgt, align, out;
      std::string site_kind = "hidden";
      int site_layer = -1;
      double alpha = 1.0;
      bool no_timestamp = false;
      int threads = 0;
    } pr;
    {
      auto* cmd = app.add_subcommand(
          "probe", "fit orthogonal probes on source-vs-target reps and export 2-D points");
      cmd->add_option("--src", pr.src, "source (label 0) representation file")->required();
      cmd->add_option("--tgt", pr.tgt, "target (label 1) representation file")->required();
      cmd->add_option("--align", pr.align,
                      "optional alignment maps: also project transformed source (label 2)");
      cmd->add_option("--site-kind", pr.site_kind, "site kind to probe")->capture_default_str();
      cmd->add_option("--site-layer", pr.site_layer, "site layer, -1 = highest available")
          ->capture_default_str();
      cmd->add_option("--alpha", pr.alpha, "blend strength for the transformed source")
          ->capture_default_str();
      cmd->add_option("--out", pr.out, "output directory")->required();
      cmd->add_flag("--no-timestamp", pr.no_timestamp, "omit timestamp/walltime from the manifest");
      cmd->add_option("--threads", pr.threads, "worker cap, 0 = INCLINE_THREADS or 1")
          ->capture_default_str();
      cmd->callback([&pr] {
        RunOutput run("probe", pr.out, pr.no_timestamp);
        run.input(pr.src);
        run.input(pr.tgt);
        run.flag("site-kind", pr.site_kind);
        run.flag("alpha", pr.alpha);
        run.flag("threads", resolve_threads(pr.threads));
        const RepFile src = load_reps(pr.src);
        const RepFile tgt = load_reps(pr.tgt);

        SiteId site;
        site.kind = parse_site_kind(pr.site_kind);
        if (pr.site_layer >= 0) {
          site.layer = pr.site_layer;
        } else {
          int best = -1;
          for (const auto& [candidate, rows] : src.reps) {
            if (candidate.kind == site.kind && candidate.layer > best &&
                tgt.reps.count(candidate)) {
              best = candidate.layer;
            }
          }
          if (best < 0) {
            throw Error(ErrorCode::SiteMismatch,
                        "no common '" + pr.site_kind + "' site in the representation files");
          }
          site.layer = best;
        }
        run.flag("site-layer", site.layer);
        const auto src_it = src.reps.find(site);
        const auto tgt_it = tgt.reps.find(site);
        if (src_it == src.reps.end() || tgt_it == tgt.reps.end()) {
          throw Error(ErrorCode::SiteMismatch, "requested site missing from a representation file");
        }
        const DenseMatrix& xs = src_it->second;
        const DenseMatrix& xt = tgt_it->second;
        if (xs.cols != xt.cols) {
          throw Error(ErrorCode::DimMismatch, "representation widths differ");
        }

        DenseMatrix stacked(xs.rows + xt.rows, xs.cols);
        std::vector<int> labels;
        labels.reserve(stacked.rows);
        for (size_t r = 0; r < xs.rows; ++r) {
          for (size_t c = 0; c < xs.cols; ++c) stacked.at(r, c) = xs.at(r, c);
          labels.push_back(0);
        }
        for (size_t r = 0; r < xt.rows; ++r) {
          for (size_t c = 0; c < xt.cols; ++c) stacked.at(xs.rows + r, c) = xt.at(r, c);
          labels.push_back(1);
        }
        const ProbePair probes = fit_probe_pair(stacked, labels);
        std::vector<Point2D> points = project2d(probes, stacked, labels);

        if (!pr.align.empty()) {
          const AlignmentSet alignment = load_alignment(pr.align);
          run.input(pr.align);
          const auto map_it = alignment.sites.find(site);
          if (map_it == alignment.sites.end()) {
            throw Error(ErrorCode::MissingSiteMatrix, "alignment has no map for the probed site");
          }
          const DenseMatrix& w = map_it->second.w;
          DenseMatrix mixed(xs.rows, xs.cols);
          for (size_t r = 0; r < xs.rows; ++r) {
            DenseVector h(xs.cols);
            for (size_t c = 0; c < xs.cols; ++c) h[c] = xs.at(r, c);
            const DenseVector wh = matvec(w, h);
            for (size_t c = 0; c < xs.cols; ++c) {
              mixed.at(r, c) = h[c] + pr.alpha * wh[c];
            }
          }
          const std::vector<int> mixed_labels(xs.rows, 2);
          const auto mixed_points = project2d(probes, mixed, mixed_labels);
          points.insert(points.end(), mixed_points.begin(), mixed_points.end());
        }

        double w1w2 = 0.0;
        for (size_t i = 0; i < probes.w1.size(); ++i) w1w2 += probes.w1[i] * probes.w2[i];
        std::string report = "probe v1\n";
        report += "site " + std::string(site_kind_name(site.kind)) + " " +
                  std::to_string(site.layer) + "\n";
        report += "n_src " + std::to_string(xs.rows) + "\n";
        report += "n_tgt " + std::to_string(xt.rows) + "\n";
        report += "w1_dot_w2 " + format_real(w1w2) + "\n";
        report += "b1 " + format_real(probes.b1) + "\n";
        report += "b2 " + format_real(probes.b2) + "\n";
        report += "acc1_train " + format_real(probes.acc1_train) + "\n";
        report += "acc1_heldout " + format_real(probes.acc1_heldout) + "\n";
        report += "acc2_train " + format_real(probes.acc2_train) + "\n";
        report += "acc2_heldout " + format_real(probes.acc2_heldout) + "\n";
        run.file("probe.txt", report);
        run.file("points.csv", points_csv(points));
        run.commit();
      });
    }

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
