#include "incline/intervene.hpp"

#include <cmath>
#include <sstream>

#include "incline/error.hpp"
#include "incline/ioutil.hpp"

namespace incline {

namespace {

std::string site_key(const SiteId& site) {
  return std::string(site_kind_name(site.kind)) + " " + std::to_string(site.layer);
}

}  // namespace

const char* intervention_mode_name(InterventionMode mode) {
  switch (mode) {
    case InterventionMode::None: return "none";
    case InterventionMode::Incline: return "incline";
    case InterventionMode::Caa: return "caa";
  }
  throw Error(ErrorCode::InvalidArgument, "bad intervention mode");
}

InterventionMode parse_intervention_mode(const std::string& name) {
  if (name == "none") return InterventionMode::None;
  if (name == "incline") return InterventionMode::Incline;
  if (name == "caa") return InterventionMode::Caa;
  throw Error(ErrorCode::ParseError, "unknown intervention mode '" + name + "'");
}

SteeringSet fit_caa(const RepTable& rep_src, const RepTable& rep_tgt) {
  if (rep_src.empty()) throw Error(ErrorCode::DegenerateData, "no sites in source table");
  if (rep_src.size() != rep_tgt.size()) {
    throw Error(ErrorCode::SiteMismatch, "source and target tables probe different site counts");
  }
  SteeringSet set;
  for (const auto& [site, src] : rep_src) {
    const auto it = rep_tgt.find(site);
    if (it == rep_tgt.end()) {
      throw Error(ErrorCode::SiteMismatch, "target table missing site " + site_key(site));
    }
    const DenseMatrix& tgt = it->second;
    if (src.rows < 1 || tgt.rows < 1) {
      throw Error(ErrorCode::DegenerateData, "empty representation table at " + site_key(site));
    }
    if (src.rows != tgt.rows) {
      throw Error(ErrorCode::SiteMismatch, "pair counts differ at " + site_key(site));
    }
    if (src.cols != tgt.cols) {
      throw Error(ErrorCode::DimMismatch, "table widths differ at " + site_key(site));
    }
    DenseVector v(static_cast<size_t>(src.cols), 0.0);
    for (size_t r = 0; r < tgt.rows; ++r) {
      for (size_t c = 0; c < tgt.cols; ++c) v[c] += tgt.at(r, c);
    }
    for (size_t c = 0; c < tgt.cols; ++c) v[c] /= static_cast<double>(tgt.rows);
    DenseVector mean_src(static_cast<size_t>(src.cols), 0.0);
    for (size_t r = 0; r < src.rows; ++r) {
      for (size_t c = 0; c < src.cols; ++c) mean_src[c] += src.at(r, c);
    }
    for (size_t c = 0; c < src.cols; ++c) {
      v[c] -= mean_src[c] / static_cast<double>(src.rows);
    }
    set.vectors.emplace(site, std::move(v));
  }
  return set;
}

std::string serialize_steering(const SteeringSet& set) {
  std::string out = "incline-caa v1\n";
  for (const auto& [site, v] : set.vectors) {
    out += "site " + site_key(site) + "\n";
    DenseMatrix row(1, static_cast<int>(v.size()));
    row.data = v;
    append_matrix(out, row);
  }
  return out;
}

SteeringSet parse_steering(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line) || line != "incline-caa v1") {
    throw Error(ErrorCode::FormatVersionMismatch, "expected 'incline-caa v1' header");
  }
  SteeringSet set;
  while (reader.next(line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string tag, kind, layer;
    in >> tag >> kind >> layer;
    if (tag != "site" || kind.empty() || layer.empty()) {
      reader.fail("bad site line '" + line + "'");
    }
    SiteId site;
    site.kind = parse_site_kind(kind);
    try {
      size_t used = 0;
      site.layer = std::stoi(layer, &used);
      if (used != layer.size() || site.layer < 0) throw std::invalid_argument(layer);
    } catch (const std::logic_error&) {
      reader.fail("bad site layer '" + layer + "'");
    }
    DenseMatrix row;
    try {
      row = parse_matrix(reader);
    } catch (const Error& e) {
      throw Error(e.code(), "site " + site_key(site) + ": " + e.what());
    }
    if (row.rows != 1) reader.fail("steering vector must be a 1-row matrix");
    if (!set.vectors.emplace(site, std::move(row.data)).second) {
      reader.fail("duplicate site " + site_key(site));
    }
  }
  return set;
}

void save_steering(const std::string& path, const SteeringSet& set) {
  write_file_atomic(path, serialize_steering(set));
}

SteeringSet load_steering(const std::string& path) { return parse_steering(read_file(path)); }

bool Interventor::wants(const SiteId& site) const {
  if (config_.mode == InterventionMode::None) return false;
  if (config_.site_kinds.count(site.kind) == 0) return false;
  if (!config_.layers.empty() && config_.layers.count(site.layer) == 0) return false;
  return true;
}

void Interventor::apply(const SiteId& site, DenseVector& h, bool count) const {
  if (count) hits_.fetch_add(1, std::memory_order_relaxed);
  if (config_.alpha == 0.0) return;  // exact no-op, not even a multiply
  if (config_.mode == InterventionMode::Incline) {
    const auto it = maps_.find(site);
    if (it == maps_.end()) {
      throw Error(ErrorCode::MissingSiteMatrix, "no map for " + site_key(site));
    }
    const DenseVector wh = matvec(it->second, h);
    for (size_t i = 0; i < h.size(); ++i) h[i] += config_.alpha * wh[i];
  } else if (config_.mode == InterventionMode::Caa) {
    const auto it = steers_.find(site);
    if (it == steers_.end()) {
      throw Error(ErrorCode::MissingSiteVector, "no steering vector for " + site_key(site));
    }
    const DenseVector& v = it->second;
    for (size_t i = 0; i < h.size(); ++i) h[i] += config_.alpha * v[i];
  }
}

std::vector<SiteId> selected_sites(const InterventionConfig& config,
                                   const ModelConfig& model_config) {
  std::vector<SiteId> out;
  if (config.mode == InterventionMode::None) return out;
  for (const auto& site : all_sites(model_config)) {
    if (config.site_kinds.count(site.kind) == 0) continue;
    if (!config.layers.empty() && config.layers.count(site.layer) == 0) continue;
    out.push_back(site);
  }
  return out;
}

std::unique_ptr<Interventor> make_interventor(const AlignmentSet* alignment,
                                              const SteeringSet* steering,
                                              const InterventionConfig& config,
                                              const ModelConfig& model_config) {
  if (!(config.alpha >= -1.0 && config.alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "alpha must lie in [-1, 1], got " + format_real(config.alpha));
  }
  if (config.mode != InterventionMode::None && config.site_kinds.empty()) {
    throw Error(ErrorCode::InvalidConfig, "site kinds must be nonempty unless mode is none");
  }
  for (int layer : config.layers) {
    if (layer < 0 || layer >= model_config.n_layers) {
      throw Error(ErrorCode::InvalidArgument,
                  "layer " + std::to_string(layer) + " outside model with " +
                      std::to_string(model_config.n_layers) + " layers");
    }
  }
  std::unique_ptr<Interventor> hook(new Interventor());
  hook->config_ = config;
  const int d = model_config.d_model;
  for (const auto& site : selected_sites(config, model_config)) {
    if (config.mode == InterventionMode::Incline) {
      if (alignment == nullptr || alignment->sites.find(site) == alignment->sites.end()) {
        throw Error(ErrorCode::MissingSiteMatrix, "alignment has no map for " + site_key(site));
      }
      const DenseMatrix& w = alignment->sites.at(site).w;
      if (w.rows != static_cast<size_t>(d) || w.cols != static_cast<size_t>(d)) {
        throw Error(ErrorCode::DimMismatch,
                    "map at " + site_key(site) + " is " + std::to_string(w.rows) + "x" +
                        std::to_string(w.cols) + ", model is d=" + std::to_string(d));
      }
      hook->maps_.emplace(site, w);
    } else if (config.mode == InterventionMode::Caa) {
      if (steering == nullptr || steering->vectors.find(site) == steering->vectors.end()) {
        throw Error(ErrorCode::MissingSiteVector, "no steering vector for " + site_key(site));
      }
      const DenseVector& v = steering->vectors.at(site);
      if (static_cast<int>(v.size()) != d) {
        throw Error(ErrorCode::DimMismatch,
                    "steering vector at " + site_key(site) + " has length " +
                        std::to_string(v.size()) + ", model is d=" + std::to_string(d));
      }
      hook->steers_.emplace(site, v);
    }
  }
  return hook;
}

}  // namespace incline
