#pragma once

// Per-site linear alignment maps between the two languages' hidden states.
//
// For every probed site we collect one representation per parallel sentence
// (taken at the final position of the sentence) and fit a d x d map W that
// sends source-language states to target-language states by least squares.
// Applying W at inference time is what the intervention module does.

#include <map>
#include <string>
#include <vector>

#include "incline/corpus.hpp"
#include "incline/linalg.hpp"
#include "incline/model.hpp"

namespace incline {

// rows = sentences, cols = d_model
using RepTable = std::map<SiteId, DenseMatrix>;

// All probe sites of a model: embedding plus attn/ffn/hidden per layer.
std::vector<SiteId> all_sites(const ModelConfig& config);

// Runs the model over each sentence and records the hidden state at the last
// position of every requested site. No intervention is active.
RepTable extract_reps(const ToyTransformer& model, const std::vector<std::vector<int>>& sentences,
                      const std::vector<SiteId>& sites);

struct SiteAlignment {
  DenseMatrix w;        // d x d, maps source rep -> target rep
  double ridge_used;    // ridge actually applied by the solver
  double residual;      // mean squared residual over the fitting pairs
};

struct AlignmentSet {
  std::string src_lang;
  std::string tgt_lang;
  int n_pairs = 0;
  std::string model_digest;  // digest of the model the reps came from
  std::map<SiteId, SiteAlignment> sites;
};

// Fits one map per site shared by both tables. Tables must agree on sites,
// row counts and widths.
AlignmentSet fit_alignment(const RepTable& rep_src, const RepTable& rep_tgt, double ridge = 0.0);

struct AlignmentFitRun {
  AlignmentSet alignment;
  double seconds = 0.0;  // wall time of extraction + fitting
};

// Convenience wrapper: extract both sides of a parallel corpus and fit.
AlignmentFitRun fit_from_parallel(const ToyTransformer& model, const ParallelCorpus& corpus,
                                  const std::vector<SiteId>& sites, double ridge = 0.0);

std::string serialize_alignment(const AlignmentSet& set);
AlignmentSet parse_alignment(const std::string& text);
void save_alignment(const std::string& path, const AlignmentSet& set);
// Emits a warning on stderr when expect_digest is nonempty and differs from
// the stored model digest; the load still succeeds.
AlignmentSet load_alignment(const std::string& path, const std::string& expect_digest = "");

// Representation table file format, used by the extract CLI step.
std::string serialize_reps(const RepTable& reps, const std::string& lang,
                           const std::string& model_digest);
struct RepFile {
  RepTable reps;
  std::string lang;
  std::string model_digest;
};
RepFile parse_reps(const std::string& text);
void save_reps(const std::string& path, const RepTable& reps, const std::string& lang,
               const std::string& model_digest);
RepFile load_reps(const std::string& path);

}  // namespace incline
