#include "incline/align.hpp"

#include <chrono>
#include <limits>
#include <iostream>
#include <sstream>

#include "incline/error.hpp"
#include "incline/ioutil.hpp"

namespace incline {

namespace {

std::string site_key(const SiteId& site) {
  return std::string(site_kind_name(site.kind)) + " " + std::to_string(site.layer);
}

SiteId parse_site_key(LineReader& reader, const std::string& kind, const std::string& layer) {
  SiteId site;
  site.kind = parse_site_kind(kind);
  try {
    size_t used = 0;
    site.layer = std::stoi(layer, &used);
    if (used != layer.size() || site.layer < 0) throw std::invalid_argument(layer);
  } catch (const std::logic_error&) {
    reader.fail("bad site layer '" + layer + "'");
  }
  return site;
}

double parse_real(LineReader& reader, const std::string& text) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + text.size() || text.empty()) reader.fail("bad real value '" + text + "'");
  return v;
}

}  // namespace

std::vector<SiteId> all_sites(const ModelConfig& config) {
  std::vector<SiteId> sites;
  sites.push_back({SiteKind::Embedding, 0});
  for (int l = 0; l < config.n_layers; ++l) {
    sites.push_back({SiteKind::AttnOutput, l});
    sites.push_back({SiteKind::FfnOutput, l});
    sites.push_back({SiteKind::Hidden, l});
  }
  return sites;
}

RepTable extract_reps(const ToyTransformer& model, const std::vector<std::vector<int>>& sentences,
                      const std::vector<SiteId>& sites) {
  if (sites.empty()) throw Error(ErrorCode::InvalidArgument, "no sites requested");
  const int d = model.config().d_model;
  RepTable table;
  for (const auto& site : sites) {
    table.emplace(site, DenseMatrix(static_cast<int>(sentences.size()), d));
  }
  for (size_t i = 0; i < sentences.size(); ++i) {
    const ForwardResult fwd = model.forward(sentences[i]);
    for (const auto& site : sites) {
      const auto it = fwd.trace.sites.find(site);
      if (it == fwd.trace.sites.end()) {
        throw Error(ErrorCode::SiteMismatch, "model produced no trace for " + site_key(site));
      }
      DenseMatrix& rows = table.at(site);
      for (int c = 0; c < d; ++c) rows.at(static_cast<int>(i), c) = it->second[static_cast<size_t>(c)];
    }
  }
  return table;
}

AlignmentSet fit_alignment(const RepTable& rep_src, const RepTable& rep_tgt, double ridge) {
  if (rep_src.empty()) throw Error(ErrorCode::DegenerateData, "no sites in source table");
  if (rep_src.size() != rep_tgt.size()) {
    throw Error(ErrorCode::SiteMismatch, "source and target tables probe different site counts");
  }
  AlignmentSet set;
  for (const auto& [site, src] : rep_src) {
    const auto it = rep_tgt.find(site);
    if (it == rep_tgt.end()) {
      throw Error(ErrorCode::SiteMismatch, "target table missing site " + site_key(site));
    }
    const DenseMatrix& tgt = it->second;
    if (src.rows != tgt.rows) {
      throw Error(ErrorCode::SiteMismatch, "pair counts differ at " + site_key(site));
    }
    if (src.cols != tgt.cols) {
      throw Error(ErrorCode::DimMismatch, "table widths differ at " + site_key(site));
    }
    const LinearMapFit fit = fit_linear_map(src, tgt, ridge);
    SiteAlignment sa;
    sa.residual = mean_sq_residual(fit.w, src, tgt);
    sa.w = fit.w;
    sa.ridge_used = fit.ridge_used;
    set.sites.emplace(site, std::move(sa));
    set.n_pairs = src.rows;
  }
  return set;
}

AlignmentFitRun fit_from_parallel(const ToyTransformer& model, const ParallelCorpus& corpus,
                                  const std::vector<SiteId>& sites, double ridge) {
  if (corpus.pairs.empty()) throw Error(ErrorCode::DegenerateData, "parallel corpus is empty");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<int>> src, tgt;
  src.reserve(corpus.pairs.size());
  tgt.reserve(corpus.pairs.size());
  for (const auto& [s, t] : corpus.pairs) {
    src.push_back(s);
    tgt.push_back(t);
  }
  const RepTable rep_src = extract_reps(model, src, sites);
  const RepTable rep_tgt = extract_reps(model, tgt, sites);
  AlignmentFitRun run;
  run.alignment = fit_alignment(rep_src, rep_tgt, ridge);
  run.alignment.src_lang = corpus.src_lang;
  run.alignment.tgt_lang = corpus.tgt_lang;
  run.alignment.model_digest = model.digest();
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

std::string serialize_alignment(const AlignmentSet& set) {
  if (set.src_lang.empty() || set.tgt_lang.empty()) {
    throw Error(ErrorCode::InvalidArgument, "alignment needs language tags before it can be saved");
  }
  std::string out = "incline-align v1\n";
  out += "src " + set.src_lang + "\n";
  out += "tgt " + set.tgt_lang + "\n";
  out += "n_pairs " + std::to_string(set.n_pairs) + "\n";
  out += "model_digest " + (set.model_digest.empty() ? std::string("-") : set.model_digest) + "\n";
  for (const auto& [site, sa] : set.sites) {
    out += "site " + site_key(site) + " ridge " + format_real(sa.ridge_used) + "\n";
    append_matrix(out, sa.w);
  }
  return out;
}

AlignmentSet parse_alignment(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line) || line != "incline-align v1") {
    throw Error(ErrorCode::FormatVersionMismatch, "expected 'incline-align v1' header");
  }
  AlignmentSet set;
  auto expect_kv = [&](const std::string& key) {
    if (!reader.next(line)) reader.fail("missing '" + key + "' line");
    std::istringstream in(line);
    std::string k, v;
    in >> k >> v;
    if (k != key || v.empty()) reader.fail("expected '" + key + " <value>', got '" + line + "'");
    return v;
  };
  set.src_lang = expect_kv("src");
  set.tgt_lang = expect_kv("tgt");
  set.n_pairs = static_cast<int>(parse_real(reader, expect_kv("n_pairs")));
  set.model_digest = expect_kv("model_digest");
  if (set.model_digest == "-") set.model_digest.clear();

  // site blocks run to the end of the file
  while (reader.next(line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string tag, kind, layer, ridge_tag, ridge_v;
    in >> tag >> kind >> layer >> ridge_tag >> ridge_v;
    if (tag != "site" || ridge_tag != "ridge" || ridge_v.empty()) {
      reader.fail("bad site line '" + line + "'");
    }
    const SiteId site = parse_site_key(reader, kind, layer);
    SiteAlignment sa;
    sa.ridge_used = parse_real(reader, ridge_v);
    sa.residual = std::numeric_limits<double>::quiet_NaN();  // not stored on disk
    try {
      sa.w = parse_matrix(reader);
    } catch (const Error& e) {
      throw Error(e.code(), "site " + site_key(site) + ": " + e.what());
    }
    if (!set.sites.emplace(site, std::move(sa)).second) {
      reader.fail("duplicate site " + site_key(site));
    }
  }
  return set;
}

void save_alignment(const std::string& path, const AlignmentSet& set) {
  write_file_atomic(path, serialize_alignment(set));
}

AlignmentSet load_alignment(const std::string& path, const std::string& expect_digest) {
  AlignmentSet set = parse_alignment(read_file(path));
  if (!expect_digest.empty() && !set.model_digest.empty() && set.model_digest != expect_digest) {
    std::cerr << "warning: alignment " << path << " was fit on model " << set.model_digest
              << " but the current model is " << expect_digest << "\n";
  }
  return set;
}

std::string serialize_reps(const RepTable& reps, const std::string& lang,
                           const std::string& model_digest) {
  std::string out = "incline-reps v1\n";
  out += "lang " + lang + "\n";
  out += "model_digest " + (model_digest.empty() ? std::string("-") : model_digest) + "\n";
  out += "n_sites " + std::to_string(reps.size()) + "\n";
  for (const auto& [site, rows] : reps) {
    out += "site " + site_key(site) + "\n";
    append_matrix(out, rows);
  }
  return out;
}

RepFile parse_reps(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line) || line != "incline-reps v1") {
    throw Error(ErrorCode::FormatVersionMismatch, "expected 'incline-reps v1' header");
  }
  RepFile file;
  auto expect_kv = [&](const std::string& key) {
    if (!reader.next(line)) reader.fail("missing '" + key + "' line");
    std::istringstream in(line);
    std::string k, v;
    in >> k >> v;
    if (k != key || v.empty()) reader.fail("expected '" + key + " <value>', got '" + line + "'");
    return v;
  };
  file.lang = expect_kv("lang");
  file.model_digest = expect_kv("model_digest");
  if (file.model_digest == "-") file.model_digest.clear();
  const int n_sites = static_cast<int>(parse_real(reader, expect_kv("n_sites")));
  if (n_sites < 0) reader.fail("negative site count");
  long long expect_rows = -1;
  for (int i = 0; i < n_sites; ++i) {
    if (!reader.next(line)) reader.fail("expected " + std::to_string(n_sites) + " site blocks");
    std::istringstream in(line);
    std::string tag, kind, layer;
    in >> tag >> kind >> layer;
    if (tag != "site") reader.fail("bad site line '" + line + "'");
    const SiteId site = parse_site_key(reader, kind, layer);
    DenseMatrix rows = parse_matrix(reader);
    if (expect_rows >= 0 && rows.rows != static_cast<size_t>(expect_rows)) {
      reader.fail("site blocks disagree on row count");
    }
    expect_rows = static_cast<long long>(rows.rows);
    if (!file.reps.emplace(site, std::move(rows)).second) {
      reader.fail("duplicate site " + site_key(site));
    }
  }
  if (reader.next(line)) reader.fail("trailing content after last site block");
  return file;
}

void save_reps(const std::string& path, const RepTable& reps, const std::string& lang,
               const std::string& model_digest) {
  write_file_atomic(path, serialize_reps(reps, lang, model_digest));
}

RepFile load_reps(const std::string& path) { return parse_reps(read_file(path)); }

}  // namespace incline
