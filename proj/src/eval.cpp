#include "incline/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "incline/error.hpp"
#include "incline/ioutil.hpp"

namespace incline {

namespace {

int restricted_argmax(const DenseMatrix& logits, int row, const std::vector<int>& candidates) {
  int best = -1;
  double best_v = 0.0;
  for (int tok : candidates) {
    if (tok < 0 || static_cast<size_t>(tok) >= logits.cols) {
      throw Error(ErrorCode::TokenOutOfRange,
                  "answer token " + std::to_string(tok) + " outside vocab");
    }
    const double v = logits.at(row, tok);
    // exact ties go to the lowest token id no matter how candidates are listed
    if (best < 0 || v > best_v || (v == best_v && tok < best)) {
      best = tok;
      best_v = v;
    }
  }
  return best;
}

GridResult run_grid(const ToyTransformer& model, const TaskDataset& ds,
                    const AlignmentSet* alignment, const SteeringSet* steering,
                    InterventionConfig base, const GridSpec& grid) {
  if (grid.step <= 0.0) throw Error(ErrorCode::InvalidArgument, "grid step must be positive");
  if (grid.lo > grid.hi) throw Error(ErrorCode::InvalidArgument, "grid lo exceeds hi");
  const int n = static_cast<int>(std::floor((grid.hi - grid.lo) / grid.step + 1e-9)) + 1;
  if (n > 10001) throw Error(ErrorCode::InvalidArgument, "grid has too many points");

  GridResult result;
  result.points.reserve(static_cast<size_t>(n));
  bool have_best = false;
  for (int i = 0; i < n; ++i) {
    const double alpha = grid.lo + i * grid.step;
    base.alpha = alpha;
    const auto hook = make_interventor(alignment, steering, base, model.config());
    const EvalResult ev = eval_task(model, ds, hook.get());
    result.points.push_back({alpha, ev.accuracy});
    const bool better =
        !have_best || ev.accuracy > result.best_accuracy ||
        (ev.accuracy == result.best_accuracy &&
         (std::fabs(alpha) < std::fabs(result.best_alpha) ||
          (std::fabs(alpha) == std::fabs(result.best_alpha) && alpha < result.best_alpha)));
    if (better) {
      result.best_alpha = alpha;
      result.best_accuracy = ev.accuracy;
      have_best = true;
    }
  }
  return result;
}

// shared sweep step: tune alpha on val, score test
AblationRow tuned_row(const ToyTransformer& model, const AlignmentSet* alignment,
                      const InterventionConfig& base, const TaskDataset& val,
                      const TaskDataset& test, const GridSpec& grid, const std::string& name) {
  const GridResult gr = run_grid(model, val, alignment, nullptr, base, grid);
  InterventionConfig best = base;
  best.alpha = gr.best_alpha;
  const auto hook = make_interventor(alignment, nullptr, best, model.config());
  AblationRow row;
  row.setting = name;
  row.alpha = gr.best_alpha;
  row.accuracy = eval_task(model, test, hook.get()).accuracy;
  return row;
}

AblationRow baseline_row(const ToyTransformer& model, const TaskDataset& test) {
  AblationRow row;
  row.setting = "baseline";
  row.alpha = 0.0;
  row.accuracy = eval_task(model, test, nullptr).accuracy;
  return row;
}

}  // namespace

EvalResult eval_task(const ToyTransformer& model, const TaskDataset& ds,
                     const InterventionHook* hook) {
  if (ds.items.empty()) throw Error(ErrorCode::InvalidDataset, "dataset has no items");
  if (ds.answer_tokens.empty()) throw Error(ErrorCode::InvalidDataset, "dataset has no answer tokens");
  EvalResult result;
  result.language = ds.language;
  result.items.reserve(ds.items.size());
  double n_correct = 0.0;
  for (size_t i = 0; i < ds.items.size(); ++i) {
    const TaskItem& item = ds.items[i];
    const auto t0 = std::chrono::steady_clock::now();
    const ForwardResult fwd = model.forward(item.tokens, hook);
    const auto t1 = std::chrono::steady_clock::now();
    ItemResult ir;
    ir.id = static_cast<int>(i);
    ir.gold = item.gold;
    ir.predicted = restricted_argmax(fwd.logits, item.answer_position, ds.answer_tokens);
    ir.correct = ir.predicted == item.gold;
    ir.latency_s = std::chrono::duration<double>(t1 - t0).count();
    if (ir.correct) n_correct += 1.0;
    result.items.push_back(ir);
  }
  result.accuracy = n_correct / static_cast<double>(result.items.size());
  return result;
}

GenEvalResult eval_generation(const ToyTransformer& model, const std::vector<GenItem>& items,
                              int max_new_tokens, const InterventionHook* hook, int stop_token) {
  GenEvalResult result;
  if (items.empty()) {
    result.exact_match = 1.0;  // vacuously perfect
    return result;
  }
  double n_match = 0.0;
  for (const auto& item : items) {
    std::vector<int> gen = model.greedy_decode(item.prompt, max_new_tokens, hook);
    if (stop_token >= 0) {
      const auto stop = std::find(gen.begin(), gen.end(), stop_token);
      gen.erase(stop, gen.end());
    }
    const bool match = gen == item.gold;
    result.matches.push_back(match);
    if (match) n_match += 1.0;
  }
  result.exact_match = n_match / static_cast<double>(items.size());
  return result;
}

double cpc(const EvalResult& a, const EvalResult& b) {
  if (a.items.size() != b.items.size() || a.items.empty()) {
    throw Error(ErrorCode::ItemMismatch, "runs cover different item counts");
  }
  double both = 0.0;
  for (size_t i = 0; i < a.items.size(); ++i) {
    if (a.items[i].id != b.items[i].id) {
      throw Error(ErrorCode::ItemMismatch,
                  "item " + std::to_string(i) + " ids differ between runs");
    }
    if (a.items[i].correct && b.items[i].correct) both += 1.0;
  }
  return both / static_cast<double>(a.items.size());
}

GridResult grid_search_alpha(const ToyTransformer& model, const TaskDataset& ds,
                             const AlignmentSet* alignment, const SteeringSet* steering,
                             InterventionConfig base, const GridSpec& grid) {
  return run_grid(model, ds, alignment, steering, base, grid);
}

AblationTable ablate_sites(const ToyTransformer& model, const AlignmentSet& alignment,
                           const TaskDataset& val, const TaskDataset& test,
                           const GridSpec& grid) {
  AblationTable table;
  table.kind = AblationKind::Site;
  table.rows.push_back(baseline_row(model, test));
  for (SiteKind kind :
       {SiteKind::Hidden, SiteKind::AttnOutput, SiteKind::FfnOutput, SiteKind::Embedding}) {
    InterventionConfig cfg;
    cfg.mode = InterventionMode::Incline;
    cfg.site_kinds = {kind};
    table.rows.push_back(tuned_row(model, &alignment, cfg, val, test, grid, site_kind_name(kind)));
  }
  return table;
}

AblationTable ablate_layers(const ToyTransformer& model, const AlignmentSet& alignment,
                            const TaskDataset& val, const TaskDataset& test,
                            const GridSpec& grid) {
  AblationTable table;
  table.kind = AblationKind::Layer;
  table.rows.push_back(baseline_row(model, test));
  for (int l = 0; l < model.config().n_layers; ++l) {
    InterventionConfig cfg;
    cfg.mode = InterventionMode::Incline;
    cfg.site_kinds = {SiteKind::Hidden};
    cfg.layers = {l};
    table.rows.push_back(tuned_row(model, &alignment, cfg, val, test, grid, std::to_string(l)));
  }
  InterventionConfig all;
  all.mode = InterventionMode::Incline;
  all.site_kinds = {SiteKind::Hidden};
  table.rows.push_back(tuned_row(model, &alignment, all, val, test, grid, "all"));
  return table;
}

AblationTable ablate_data_size(const ToyTransformer& model, const ParallelCorpus& corpus,
                               const std::vector<int>& sizes, const TaskDataset& val,
                               const TaskDataset& test, const GridSpec& grid) {
  if (sizes.empty()) throw Error(ErrorCode::InvalidArgument, "no sizes requested");
  AblationTable table;
  table.kind = AblationKind::DataSize;
  table.rows.push_back(baseline_row(model, test));
  const auto sites = all_sites(model.config());
  for (int n : sizes) {
    if (n < 1 || static_cast<size_t>(n) > corpus.pairs.size()) {
      throw Error(ErrorCode::InvalidArgument,
                  "size " + std::to_string(n) + " exceeds the parallel corpus (" +
                      std::to_string(corpus.pairs.size()) + " pairs)");
    }
    ParallelCorpus prefix;
    prefix.src_lang = corpus.src_lang;
    prefix.tgt_lang = corpus.tgt_lang;
    prefix.pairs.assign(corpus.pairs.begin(), corpus.pairs.begin() + n);
    const AlignmentFitRun run = fit_from_parallel(model, prefix, sites);

    InterventionConfig cfg;
    cfg.mode = InterventionMode::Incline;
    cfg.site_kinds = {SiteKind::Hidden};
    AblationRow row = tuned_row(model, &run.alignment, cfg, val, test, grid, std::to_string(n));
    row.n_pairs = n;
    row.seconds = run.seconds;
    table.rows.push_back(std::move(row));
  }
  return table;
}

AblationTable ablate_domain(const ToyTransformer& model, const ParallelCorpus& task_corpus,
                            const ParallelCorpus& shifted_corpus, const TaskDataset& val,
                            const TaskDataset& test, const GridSpec& grid) {
  AblationTable table;
  table.kind = AblationKind::Domain;
  table.rows.push_back(baseline_row(model, test));
  const auto sites = all_sites(model.config());
  InterventionConfig cfg;
  cfg.mode = InterventionMode::Incline;
  cfg.site_kinds = {SiteKind::Hidden};
  const AlignmentFitRun in_domain = fit_from_parallel(model, task_corpus, sites);
  table.rows.push_back(tuned_row(model, &in_domain.alignment, cfg, val, test, grid, "task"));
  const AlignmentFitRun shifted = fit_from_parallel(model, shifted_corpus, sites);
  table.rows.push_back(tuned_row(model, &shifted.alignment, cfg, val, test, grid, "shifted"));
  return table;
}

std::string grid_csv(const GridResult& grid) {
  std::string out = "alpha,accuracy\n";
  for (const auto& p : grid.points) {
    out += format_real(p.alpha) + "," + format_real(p.accuracy) + "\n";
  }
  return out;
}

namespace {

const char* ablation_kind_name(AblationKind kind) {
  switch (kind) {
    case AblationKind::Site: return "site";
    case AblationKind::Layer: return "layer";
    case AblationKind::DataSize: return "datasize";
    case AblationKind::Domain: return "domain";
  }
  throw Error(ErrorCode::InvalidArgument, "bad ablation kind");
}

}  // namespace

std::string ablation_csv(const AblationTable& table) {
  std::string out;
  const bool sized = table.kind == AblationKind::DataSize;
  switch (table.kind) {
    case AblationKind::Site: out = "site,accuracy\n"; break;
    case AblationKind::Layer: out = "layer,accuracy\n"; break;
    case AblationKind::DataSize: out = "n_pairs,seconds,accuracy\n"; break;
    case AblationKind::Domain: out = "domain,accuracy\n"; break;
  }
  for (const auto& row : table.rows) {
    if (sized) {
      // baseline carries no fit: keep the row but at size 0 / zero seconds
      out += std::to_string(row.n_pairs) + "," + format_real(row.seconds) + "," +
             format_real(row.accuracy) + "\n";
    } else {
      out += row.setting + "," + format_real(row.accuracy) + "\n";
    }
  }
  return out;
}

std::string ablation_report(const AblationTable& table) {
  std::string out = "ablation v1 " + std::string(ablation_kind_name(table.kind)) + "\n";
  for (const auto& row : table.rows) {
    out += "row " + row.setting + " alpha " + format_real(row.alpha) + " accuracy " +
           format_real(row.accuracy);
    if (table.kind == AblationKind::DataSize) {
      out += " n_pairs " + std::to_string(row.n_pairs) + " seconds " + format_real(row.seconds);
    }
    out += "\n";
  }
  return out;
}

// --- probes ----------------------------------------------------------------

namespace {

double dot(const DenseVector& a, const DenseVector& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double row_dot(const DenseMatrix& x, int row, const DenseVector& w) {
  double s = 0.0;
  for (size_t c = 0; c < x.cols; ++c) s += x.at(row, c) * w[c];
  return s;
}

double split_accuracy(const DenseMatrix& x, const std::vector<int>& labels, const DenseVector& w,
                      double bias, bool heldout) {
  double n = 0.0, correct = 0.0;
  for (size_t r = 0; r < x.rows; ++r) {
    if ((r % 5 == 4) != heldout) continue;
    n += 1.0;
    const int pred = row_dot(x, static_cast<int>(r), w) + bias > 0.0 ? 1 : 0;
    if (pred == labels[r]) correct += 1.0;
  }
  return n > 0.0 ? correct / n : 0.0;
}

// full-batch logistic regression with bias; orthogonal constraint on the
// weight (never the bias) optional
DenseVector train_probe(const DenseMatrix& x, const std::vector<int>& labels,
                        const DenseVector* orthogonal_to, double& bias) {
  constexpr int kSteps = 20000;
  constexpr double kLr = 0.5;
  DenseVector w(static_cast<size_t>(x.cols), 0.0);
  bias = 0.0;
  std::vector<int> train_rows;
  for (size_t r = 0; r < x.rows; ++r) {
    if (r % 5 != 4) train_rows.push_back(static_cast<int>(r));
  }
  for (int step = 0; step < kSteps; ++step) {
    DenseVector grad(static_cast<size_t>(x.cols), 0.0);
    double grad_b = 0.0;
    for (int r : train_rows) {
      const double z = row_dot(x, r, w) + bias;
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double coeff = p - static_cast<double>(labels[static_cast<size_t>(r)]);
      for (size_t c = 0; c < x.cols; ++c) grad[c] += coeff * x.at(r, c);
      grad_b += coeff;
    }
    const double inv_n = 1.0 / static_cast<double>(train_rows.size());
    for (auto& g : grad) g *= inv_n;
    grad_b *= inv_n;
    if (orthogonal_to != nullptr) {
      const double proj = dot(grad, *orthogonal_to);
      for (size_t i = 0; i < grad.size(); ++i) grad[i] -= proj * (*orthogonal_to)[i];
    }
    for (size_t i = 0; i < w.size(); ++i) w[i] -= kLr * grad[i];
    bias -= kLr * grad_b;
  }
  return w;
}

void normalize_or_throw(DenseVector& w, const std::string& which) {
  const double norm = std::sqrt(dot(w, w));
  if (norm < 1e-12) {
    throw Error(ErrorCode::DegenerateData, which + " probe collapsed to the zero vector");
  }
  for (auto& v : w) v /= norm;
}

}  // namespace

ProbePair fit_probe_pair(const DenseMatrix& x, const std::vector<int>& labels) {
  if (x.rows != labels.size()) {
    throw Error(ErrorCode::DimMismatch, "label count does not match row count");
  }
  if (x.rows < 10) throw Error(ErrorCode::InvalidDataset, "need at least 10 rows to fit probes");
  bool saw0 = false, saw1 = false;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0) saw0 = true;
    else if (labels[i] == 1) saw1 = true;
    else throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  }
  if (!saw0 || !saw1) throw Error(ErrorCode::DegenerateLabels, "all labels identical");
  // the train split needs both classes too
  bool train0 = false, train1 = false;
  for (size_t r = 0; r < x.rows; ++r) {
    if (r % 5 == 4) continue;
    (labels[r] == 0 ? train0 : train1) = true;
  }
  if (!train0 || !train1) {
    throw Error(ErrorCode::DegenerateLabels, "train split is single-class");
  }

  ProbePair pair;
  pair.w1 = train_probe(x, labels, nullptr, pair.b1);
  const double norm1 = std::sqrt(dot(pair.w1, pair.w1));
  normalize_or_throw(pair.w1, "first");
  pair.b1 /= norm1;  // same decision boundary, unit weight
  pair.w2 = train_probe(x, labels, &pair.w1, pair.b2);
  // clean up residual drift, then renormalize and re-project
  double proj = dot(pair.w2, pair.w1);
  for (size_t i = 0; i < pair.w2.size(); ++i) pair.w2[i] -= proj * pair.w1[i];
  const double norm2 = std::sqrt(dot(pair.w2, pair.w2));
  normalize_or_throw(pair.w2, "second");
  pair.b2 /= norm2;
  proj = dot(pair.w2, pair.w1);
  for (size_t i = 0; i < pair.w2.size(); ++i) pair.w2[i] -= proj * pair.w1[i];

  pair.acc1_train = split_accuracy(x, labels, pair.w1, pair.b1, false);
  pair.acc1_heldout = split_accuracy(x, labels, pair.w1, pair.b1, true);
  pair.acc2_train = split_accuracy(x, labels, pair.w2, pair.b2, false);
  pair.acc2_heldout = split_accuracy(x, labels, pair.w2, pair.b2, true);
  return pair;
}

std::vector<Point2D> project2d(const ProbePair& probes, const DenseMatrix& x,
                               const std::vector<int>& labels) {
  if (x.rows != labels.size()) {
    throw Error(ErrorCode::DimMismatch, "label count does not match row count");
  }
  if (probes.w1.size() != x.cols) {
    throw Error(ErrorCode::DimMismatch, "probe width does not match row width");
  }
  std::vector<Point2D> out;
  out.reserve(static_cast<size_t>(x.rows));
  for (size_t r = 0; r < x.rows; ++r) {
    Point2D p;
    p.x = row_dot(x, static_cast<int>(r), probes.w1);
    p.y = row_dot(x, static_cast<int>(r), probes.w2);
    p.label = labels[static_cast<size_t>(r)];
    out.push_back(p);
  }
  return out;
}

std::string points_csv(const std::vector<Point2D>& points) {
  std::string out = "x,y,label\n";
  for (const auto& p : points) {
    out += format_real(p.x) + "," + format_real(p.y) + "," + std::to_string(p.label) + "\n";
  }
  return out;
}

}  // namespace incline
