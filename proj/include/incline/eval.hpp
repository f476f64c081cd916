#pragma once

// Task evaluation, cross-lingual consistency, alpha grid search, ablation
// sweeps and the 2-D probe projection used to visualise representations.

#include <string>
#include <vector>

#include "incline/corpus.hpp"
#include "incline/intervene.hpp"
#include "incline/model.hpp"

namespace incline {

struct ItemResult {
  int id = 0;  // index of the item in its dataset
  int gold = 0;
  int predicted = 0;
  bool correct = false;
  double latency_s = 0.0;  // wall time of this item's forward pass(es)
};

struct EvalResult {
  std::string language;
  double accuracy = 0.0;
  std::vector<ItemResult> items;
};

// Scores every item by restricted argmax over the dataset's answer tokens at
// the item's answer position. Ties resolve to the lowest token id. hook may
// be null (plain forward pass).
EvalResult eval_task(const ToyTransformer& model, const TaskDataset& ds,
                     const InterventionHook* hook = nullptr);

struct GenItem {
  std::vector<int> prompt;
  std::vector<int> gold;  // expected continuation, already truncated
};

struct GenEvalResult {
  double exact_match = 0.0;
  std::vector<bool> matches;
};

// Greedy decoding scored by exact match after cutting the generation at the
// first stop token (stop_token < 0 disables truncation).
GenEvalResult eval_generation(const ToyTransformer& model, const std::vector<GenItem>& items,
                              int max_new_tokens, const InterventionHook* hook = nullptr,
                              int stop_token = -1);

// Fraction of items answered correctly in BOTH runs. Runs must cover the
// same items in the same order.
double cpc(const EvalResult& a, const EvalResult& b);

struct GridSpec {
  double lo = -1.0;
  double hi = 1.0;
  double step = 0.1;
};

struct GridPoint {
  double alpha = 0.0;
  double accuracy = 0.0;
};

struct GridResult {
  std::vector<GridPoint> points;
  double best_alpha = 0.0;
  double best_accuracy = 0.0;
};

// Evaluates the dataset at every alpha on the grid. Accuracy ties resolve to
// the smallest |alpha|, then to the negative sign. The alpha = 0 point is an
// exact no-intervention run.
GridResult grid_search_alpha(const ToyTransformer& model, const TaskDataset& ds,
                             const AlignmentSet* alignment, const SteeringSet* steering,
                             InterventionConfig base, const GridSpec& grid = {});

enum class AblationKind { Site, Layer, DataSize, Domain };

struct AblationRow {
  std::string setting;   // "baseline", a site kind, a layer, a size, a domain
  int n_pairs = 0;       // data-size sweep only
  double seconds = 0.0;  // data-size sweep only: extraction + fit wall time
  double alpha = 0.0;    // alpha chosen on the validation split
  double accuracy = 0.0; // test-split accuracy at that alpha
};

struct AblationTable {
  AblationKind kind = AblationKind::Site;
  std::vector<AblationRow> rows;
};

// Every sweep follows the same protocol: pick alpha on `val` by grid search,
// report accuracy on `test`, and include the un-intervened baseline row.

// One row per site kind, intervening at that kind across all layers.
AblationTable ablate_sites(const ToyTransformer& model, const AlignmentSet& alignment,
                           const TaskDataset& val, const TaskDataset& test,
                           const GridSpec& grid = {});

// One row per single layer plus an all-layers row (hidden-state site).
AblationTable ablate_layers(const ToyTransformer& model, const AlignmentSet& alignment,
                            const TaskDataset& val, const TaskDataset& test,
                            const GridSpec& grid = {});

// Refits the alignment on growing prefixes of the parallel corpus and tracks
// fit wall time alongside accuracy (hidden-state site, all layers).
AblationTable ablate_data_size(const ToyTransformer& model, const ParallelCorpus& corpus,
                               const std::vector<int>& sizes, const TaskDataset& val,
                               const TaskDataset& test, const GridSpec& grid = {});

// Alignments fit on in-domain vs out-of-domain parallel text, same protocol.
AblationTable ablate_domain(const ToyTransformer& model, const ParallelCorpus& task_corpus,
                            const ParallelCorpus& shifted_corpus, const TaskDataset& val,
                            const TaskDataset& test, const GridSpec& grid = {});

std::string grid_csv(const GridResult& grid);

// Plot-ready curve: site,accuracy / layer,accuracy / n_pairs,seconds,accuracy
// / domain,accuracy depending on the table kind.
std::string ablation_csv(const AblationTable& table);

// Machine-readable report with the tuned alpha of every row.
std::string ablation_report(const AblationTable& table);

// --- probes ----------------------------------------------------------------

struct ProbePair {
  DenseVector w1;   // unit norm
  DenseVector w2;   // unit norm, orthogonal to w1 within 1e-8
  double b1 = 0.0;  // bias terms participate in classification only;
  double b2 = 0.0;  // projections stay bias-free
  double acc1_train = 0.0;
  double acc1_heldout = 0.0;
  double acc2_train = 0.0;
  double acc2_heldout = 0.0;
};

// Trains two logistic probes on the same binary labels; the second is
// constrained (by gradient projection on its weights) to stay orthogonal to
// the first. Rows with index % 5 == 4 form the held-out split.
ProbePair fit_probe_pair(const DenseMatrix& x, const std::vector<int>& labels);

struct Point2D {
  double x = 0.0;
  double y = 0.0;
  int label = 0;
};

// Projects rows onto (w1, w2).
std::vector<Point2D> project2d(const ProbePair& probes, const DenseMatrix& x,
                               const std::vector<int>& labels);

std::string points_csv(const std::vector<Point2D>& points);

}  // namespace incline
