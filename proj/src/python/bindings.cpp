#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <string>
#include <vector>

#include "promptkit/alignment.hpp"
#include "promptkit/data_engine.hpp"
#include "promptkit/gradcheck.hpp"
#include "promptkit/order_align.hpp"
#include "promptkit/rng.hpp"
#include "promptkit/set_losses.hpp"

namespace py = pybind11;
using namespace promptkit;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Matrix();
  for (const auto& r : rows)
    if (r.size() != rows.front().size()) throw std::invalid_argument("ragged matrix");
  return Matrix::from_rows(rows);
}

std::vector<std::vector<double>> to_lists(const Matrix& m) {
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

py::dict report_dict(const VerificationReport& r) {
  py::dict d;
  d["input_a"] = r.input_a;
  d["input_b"] = r.input_b;
  d["matched"] = r.matched;
  d["gated"] = r.gated;
  d["retained"] = r.retained;
  d["retention_rate"] = r.retention_rate;
  d["mean_similarity_before"] = r.mean_similarity_before;
  d["mean_similarity_after"] = r.mean_similarity_after;
  return d;
}

}  // namespace

PYBIND11_MODULE(_promptkit, m) {
  m.doc() = "Prompt-conditioned detection mechanisms";

  m.def("kendall_tau", [](const Vector& a, const Vector& b) {
    const TauResult t = kendall_tau(a, b);
    py::dict d;
    d["tau"] = t.tau;
    d["concordant"] = t.concordant;
    d["discordant"] = t.discordant;
    d["n"] = t.n;
    return d;
  });
  m.def("soft_tau", [](const Vector& a, const Vector& b, double scale) { return soft_tau_convergence(a, b, scale); },
        py::arg("a"), py::arg("b"), py::arg("scale") = 1000.0);
  m.def("order_loss", [](const Vector& a, const Vector& b) {
    const OrderLossResult r = order_loss(a, b);
    return py::make_tuple(r.loss, r.grad_a, r.grad_b);
  });
  m.def("select_queries",
        [](const Vector& text, const Vector& visual, std::size_t k, double alpha) {
          return select_queries(text, visual, k, alpha);
        },
        py::arg("text"), py::arg("visual"), py::arg("k"), py::arg("alpha") = kDefaultSelectionAlpha);

  m.def("hungarian", [](const std::vector<std::vector<double>>& costs) {
    const Assignment a = hungarian(to_matrix(costs));
    return py::make_tuple(a.row_to_col, a.total_cost);
  });
  m.def("giou_loss", [](const std::array<double, 4>& pred, const std::array<double, 4>& gt) {
    const BoxLoss r = giou_loss(BoxXYXY::from_array(pred), BoxXYXY::from_array(gt));
    return py::make_tuple(r.loss, r.grad);
  });
  m.def("l1_box_loss", [](const std::array<double, 4>& pred, const std::array<double, 4>& gt) {
    const BoxLoss r = l1_box_loss(BoxXYXY::from_array(pred), BoxXYXY::from_array(gt));
    return py::make_tuple(r.loss, r.grad);
  });

  m.def("align_loss",
        [](const std::vector<std::vector<double>>& visual, const std::vector<std::vector<double>>& text,
           double temperature) {
          const AlignLossResult r = align_loss(to_matrix(visual), to_matrix(text), temperature);
          return py::make_tuple(r.loss, to_lists(r.grad_visual), to_lists(r.grad_text));
        },
        py::arg("visual"), py::arg("text"), py::arg("temperature") = kDefaultAlignTemperature);

  m.def("sample_batches", [](const std::string& manifest_json, std::uint64_t seed) {
    SamplerManifest manifest = parse_manifest(manifest_json);
    manifest.seed = seed;
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    for (auto& b : sample_batches(manifest)) out.emplace_back(b.dataset, std::move(b.sample_ids));
    return out;
  });

  m.def("cross_verify",
        [](const std::string& a_json, const std::string& b_json, std::size_t hash_dim, double iou_gate,
           double sim_threshold) {
          const EmbeddingProvider emb = EmbeddingProvider::hash_only(hash_dim);
          const VerifyResult r = cross_verify(parse_annotation_set(a_json), parse_annotation_set(b_json), emb,
                                              {iou_gate, sim_threshold, RetentionBase::mean_of_inputs});
          return py::make_tuple(dump_annotation_set(r.verified), report_dict(r.report));
        },
        py::arg("a_json"), py::arg("b_json"), py::arg("hash_dim") = 256, py::arg("iou_gate") = kDefaultIouGate,
        py::arg("sim_threshold") = kDefaultSimThreshold);

  m.def("gradcheck",
        [](const std::string& loss, std::size_t n, std::uint64_t seed) {
          Rng rng(seed);
          const GradCheckReport r = gradcheck_instance(parse_grad_loss(loss), n, rng);
          return py::make_tuple(r.max_rel_err, r.max_abs_err, r.n_params);
        },
        py::arg("loss"), py::arg("n") = 16, py::arg("seed") = 0);
}
