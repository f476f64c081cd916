// Python bindings for the core pipeline: corpus generation, the toy model,
// representation extraction, alignment fitting and intervened evaluation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "incline/align.hpp"
#include "incline/corpus.hpp"
#include "incline/error.hpp"
#include "incline/eval.hpp"
#include "incline/intervene.hpp"
#include "incline/linalg.hpp"
#include "incline/model.hpp"

namespace py = pybind11;
using namespace incline;

namespace {

DenseMatrix matrix_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::DimMismatch, "expected a 2-D array");
  DenseMatrix m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  const auto r = a.unchecked<2>();
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) m.at(i, j) = r(i, j);
  }
  return m;
}

py::array_t<double> array_from_matrix(const DenseMatrix& m) {
  py::array_t<double> a({m.rows, m.cols});
  auto w = a.mutable_unchecked<2>();
  for (int i = 0; i < m.rows; ++i) {
    for (int j = 0; j < m.cols; ++j) w(i, j) = m.at(i, j);
  }
  return a;
}

std::vector<TrainItem> items_from_python(const std::vector<std::tuple<std::vector<int>, int, int>>& raw) {
  std::vector<TrainItem> items;
  items.reserve(raw.size());
  for (const auto& [tokens, pos, gold] : raw) {
    items.push_back({tokens, pos, gold});
  }
  return items;
}

std::vector<std::tuple<std::vector<int>, int, int>> items_to_python(const std::vector<TaskItem>& items) {
  std::vector<std::tuple<std::vector<int>, int, int>> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    out.emplace_back(item.tokens, item.answer_position, item.gold);
  }
  return out;
}

using PyRepTable = std::map<std::pair<std::string, int>, py::array_t<double>>;

RepTable rep_table_from_python(const PyRepTable& reps) {
  RepTable table;
  for (const auto& [key, a] : reps) {
    SiteId site{parse_site_kind(key.first), key.second};
    table.emplace(site, matrix_from_array(a));
  }
  return table;
}

PyRepTable rep_table_to_python(const RepTable& table) {
  PyRepTable out;
  for (const auto& [site, rows] : table) {
    out.emplace(std::make_pair(std::string(site_kind_name(site.kind)), site.layer),
                array_from_matrix(rows));
  }
  return out;
}

AlignmentSet alignment_from_python(const PyRepTable& maps) {
  AlignmentSet set;
  for (const auto& [key, a] : maps) {
    SiteId site{parse_site_kind(key.first), key.second};
    SiteAlignment sa;
    sa.w = matrix_from_array(a);
    set.sites.emplace(site, std::move(sa));
  }
  return set;
}

InterventionConfig config_from_flags(double alpha, const std::vector<std::string>& sites,
                                     const std::vector<int>& layers, const std::string& mode) {
  InterventionConfig cfg;
  cfg.mode = parse_intervention_mode(mode);
  cfg.alpha = alpha;
  cfg.site_kinds.clear();
  for (const auto& s : sites) cfg.site_kinds.insert(parse_site_kind(s));
  cfg.layers = std::set<int>(layers.begin(), layers.end());
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "cross-lingual representation alignment laboratory (C++ core)";

  py::register_exception<Error>(m, "InclineError");

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](int vocab_size, int d_model, int n_layers, int n_heads, int d_ff,
                       int max_seq_len, uint64_t seed, bool tied) {
             return ModelConfig{vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len, seed, tied};
           }),
           py::arg("vocab_size") = 96, py::arg("d_model") = 32, py::arg("n_layers") = 2,
           py::arg("n_heads") = 4, py::arg("d_ff") = 128, py::arg("max_seq_len") = 32,
           py::arg("seed") = 1, py::arg("tied") = false)
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_readwrite("tied", &ModelConfig::tied);

  py::class_<ToyTransformer>(m, "Model")
      .def(py::init<const ModelConfig&>(), py::arg("config"))
      .def_property_readonly("config", &ToyTransformer::config)
      .def("logits",
           [](const ToyTransformer& self, const std::vector<int>& tokens) {
             return array_from_matrix(self.forward(tokens).logits);
           },
           py::arg("tokens"), "Forward pass; returns the full (T, vocab) logit matrix.")
      .def("decode",
           [](const ToyTransformer& self, const std::vector<int>& prompt, int max_new) {
             return self.greedy_decode(prompt, max_new);
           },
           py::arg("prompt"), py::arg("max_new"), "Greedy continuation (generated tokens only).")
      .def_property_readonly("digest", &ToyTransformer::digest)
      .def("save", &ToyTransformer::save, py::arg("path"))
      .def_static("load", &ToyTransformer::load, py::arg("path"));

  m.def(
      "train",
      [](const ToyTransformer& model, const std::vector<std::tuple<std::vector<int>, int, int>>& items,
         int steps, double lr, int batch_size) {
        TrainConfig tc{steps, lr, batch_size};
        TrainResult result = train(model, items_from_python(items), tc);
        return std::make_pair(std::move(result.model), result.losses);
      },
      py::arg("model"), py::arg("items"), py::arg("steps") = 1200, py::arg("lr") = 3e-3,
      py::arg("batch_size") = 32,
      "Train a copy of the model on (tokens, answer_position, gold) items; returns (model, losses).");

  m.def(
      "gen_bilingual",
      [](const std::string& task, int n_content, int seq_len, int n_train, int n_val, int n_test,
         int n_parallel, const std::string& domain, uint64_t seed) {
        BilingualSpec spec;
        spec.task = parse_task_kind(task);
        spec.n_content_tokens = n_content;
        spec.seq_len = seq_len;
        spec.n_train = n_train;
        spec.n_val = n_val;
        spec.n_test = n_test;
        spec.n_parallel = n_parallel;
        if (domain == "task") spec.domain = DomainTag::TaskDomain;
        else if (domain == "shifted") spec.domain = DomainTag::ShiftedDomain;
        else throw Error(ErrorCode::InvalidArgument, "domain must be 'task' or 'shifted'");
        spec.mapping_seed = seed;
        const BilingualData data = gen_bilingual(spec);
        py::dict out;
        out["a_train"] = items_to_python(data.a_train.items);
        out["a_val"] = items_to_python(data.a_val.items);
        out["a_test"] = items_to_python(data.a_test.items);
        out["b_val"] = items_to_python(data.b_val.items);
        out["b_test"] = items_to_python(data.b_test.items);
        out["parallel"] = data.parallel.pairs;
        out["answer_tokens"] = data.a_train.answer_tokens;
        out["min_vocab"] = min_vocab_size(spec);
        return out;
      },
      py::arg("task") = "majority", py::arg("n_content") = 20, py::arg("seq_len") = 9,
      py::arg("n_train") = 2000, py::arg("n_val") = 200, py::arg("n_test") = 500,
      py::arg("n_parallel") = 500, py::arg("domain") = "task", py::arg("seed") = 1,
      "Generate the bilingual synthetic corpus as plain Python structures.");

  m.def(
      "fit_linear_map",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& s,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& t, double ridge) {
        const LinearMapFit fit = fit_linear_map(matrix_from_array(s), matrix_from_array(t), ridge);
        return std::make_pair(array_from_matrix(fit.w), fit.ridge_used);
      },
      py::arg("source"), py::arg("target"), py::arg("ridge") = 0.0,
      "Closed-form least-squares map W minimizing sum ||W s_i - t_i||^2; returns (W, ridge_used).");

  m.def(
      "extract_reps",
      [](const ToyTransformer& model, const std::vector<std::vector<int>>& sentences) {
        return rep_table_to_python(extract_reps(model, sentences, all_sites(model.config())));
      },
      py::arg("model"), py::arg("sentences"),
      "Last-token representations at every site: {(kind, layer): (N, d) array}.");

  m.def(
      "fit_alignment",
      [](const PyRepTable& rep_src, const PyRepTable& rep_tgt, double ridge) {
        const AlignmentSet set =
            fit_alignment(rep_table_from_python(rep_src), rep_table_from_python(rep_tgt), ridge);
        PyRepTable out;
        for (const auto& [site, sa] : set.sites) {
          out.emplace(std::make_pair(std::string(site_kind_name(site.kind)), site.layer),
                      array_from_matrix(sa.w));
        }
        return out;
      },
      py::arg("rep_src"), py::arg("rep_tgt"), py::arg("ridge") = 0.0,
      "Per-site alignment maps: {(kind, layer): (d, d) array}.");

  m.def(
      "eval_accuracy",
      [](const ToyTransformer& model, const std::vector<std::tuple<std::vector<int>, int, int>>& items,
         const std::vector<int>& answer_tokens, const py::object& alignment, double alpha,
         const std::vector<std::string>& sites, const std::vector<int>& layers) {
        TaskDataset ds;
        ds.language = "?";
        ds.items = items_from_python(items);
        ds.answer_tokens = answer_tokens;
        if (alignment.is_none()) return eval_task(model, ds).accuracy;
        const AlignmentSet set = alignment_from_python(alignment.cast<PyRepTable>());
        const InterventionConfig cfg = config_from_flags(alpha, sites, layers, "incline");
        const auto hook = make_interventor(&set, nullptr, cfg, model.config());
        return eval_task(model, ds, hook.get()).accuracy;
      },
      py::arg("model"), py::arg("items"), py::arg("answer_tokens"), py::arg("alignment") = py::none(),
      py::arg("alpha") = 1.0, py::arg("sites") = std::vector<std::string>{"hidden"},
      py::arg("layers") = std::vector<int>{},
      "Restricted-argmax accuracy, optionally with the aligned intervention.");
}
