#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "limarec/checkpoint.hpp"
#include "limarec/cli.hpp"
#include "limarec/encoder.hpp"
#include "limarec/errors.hpp"
#include "limarec/evaluation.hpp"
#include "limarec/feature_map.hpp"
#include "limarec/streaming_state.hpp"

namespace py = pybind11;
using namespace limarec;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(m.rows()),
                                                   static_cast<py::ssize_t>(m.cols())});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_numpy(std::span<const double> v) {
  py::array_t<double> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Vector from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return Vector(a.data(), a.data() + a.size());
}

// A loaded checkpoint together with its raw-id index and an encoder bound to
// the model. Shared so that states and encoders never outlive the model.
class Recommender {
 public:
  explicit Recommender(Checkpoint ckpt)
      : ckpt_(std::make_shared<const Checkpoint>(std::move(ckpt))), encoder_(ckpt_->model) {
    for (std::size_t i = 1; i < ckpt_->item_ids.size(); ++i)
      index_.emplace(ckpt_->item_ids[i], static_cast<ItemId>(i));
  }

  static Recommender load(const std::string& path) { return Recommender(load_checkpoint(path)); }

  const Model& model() const { return ckpt_->model; }
  const std::vector<std::string>& item_ids() const { return ckpt_->item_ids; }

  ItemId item_index(const std::string& raw) const {
    const auto it = index_.find(raw);
    if (it == index_.end()) throw py::key_error("unknown item '" + raw + "'");
    return it->second;
  }

  UserState init_state() const { return encoder_.init_state(); }

  py::array_t<double> ingest(UserState& state, const std::string& item) const {
    return to_numpy(encoder_.ingest(state, item_index(item)).phis);
  }

  py::array_t<double> interests(const UserState& state) const {
    return to_numpy(encoder_.interest_set(state).phis);
  }

  std::vector<std::string> recommend(const UserState& state, std::size_t k) const {
    const auto top = top_k_items(model(), encoder_.interest_set(state), k);
    std::vector<std::string> out;
    out.reserve(top.size());
    for (ItemId i : top) out.push_back(ckpt_->item_ids[i]);
    return out;
  }

  py::array_t<double> encode(const std::vector<std::string>& items) const {
    std::vector<ItemId> dense;
    dense.reserve(items.size());
    for (const auto& raw : items) dense.push_back(item_index(raw));
    return to_numpy(encode_batch(dense, model()));
  }

  py::bytes serialize(const UserState& state, int width) const {
    const auto bytes = serialize_state(state, state_dims(model()), encoding(width));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }

  UserState deserialize(const py::bytes& record) const {
    const std::string raw = record;
    return deserialize_state(
        std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()), state_dims(model()));
  }

  std::size_t record_size(int width) const {
    return state_record_size(state_dims(model()), encoding(width));
  }

 private:
  static StateEncoding encoding(int width) {
    if (width == 32) return StateEncoding::f32;
    if (width == 64) return StateEncoding::f64;
    throw std::invalid_argument("width must be 32 or 64");
  }

  std::shared_ptr<const Checkpoint> ckpt_;
  IncrementalEncoder encoder_;
  std::unordered_map<std::string, ItemId> index_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Streaming multi-interest sequential recommender";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<UserState>(m, "UserState")
      .def_readonly("position", &UserState::position)
      .def_property_readonly("dim", &UserState::dim)
      .def_property_readonly("features", &UserState::features)
      .def("same_record", &UserState::same_record);

  py::class_<Recommender>(m, "Recommender")
      .def_static("load", &Recommender::load, py::arg("path"))
      .def_property_readonly("dim", [](const Recommender& r) { return r.model().dim(); })
      .def_property_readonly("feature_dim",
                             [](const Recommender& r) { return r.model().feature_map.feature_dim; })
      .def_property_readonly("num_interests",
                             [](const Recommender& r) { return r.model().config.interests(); })
      .def_property_readonly("multi_interest",
                             [](const Recommender& r) { return r.model().config.multi_interest; })
      .def_property_readonly("vocab_size",
                             [](const Recommender& r) { return r.model().config.vocab_size; })
      .def_property_readonly("item_ids",
                             [](const Recommender& r) {
                               return std::vector<std::string>(r.item_ids().begin() + 1,
                                                               r.item_ids().end());
                             })
      .def("init_state", &Recommender::init_state)
      .def("ingest", &Recommender::ingest, py::arg("state"), py::arg("item"),
           "Folds one item into the state and returns the K x d interest matrix.")
      .def("interests", &Recommender::interests, py::arg("state"))
      .def("recommend", &Recommender::recommend, py::arg("state"), py::arg("k") = 10,
           "Top-k raw item ids over the whole vocabulary, best first.")
      .def("encode", &Recommender::encode, py::arg("items"),
           "Batch forward pass; returns the L x d output of the last block.")
      .def("serialize", &Recommender::serialize, py::arg("state"), py::arg("width") = 32)
      .def("deserialize", &Recommender::deserialize, py::arg("record"))
      .def("record_size", &Recommender::record_size, py::arg("width") = 32);

  py::class_<FeatureMapSpec>(m, "FeatureMap")
      .def(py::init([](std::size_t input_dim, std::size_t feature_dim, bool scale, std::uint64_t seed) {
             SeededRng rng(seed);
             return FeatureMapSpec::draw(input_dim, feature_dim, scale, rng);
           }),
           py::arg("input_dim"), py::arg("feature_dim"), py::arg("scale_by_sqrt_d") = true,
           py::arg("seed") = 0)
      .def_readonly("input_dim", &FeatureMapSpec::input_dim)
      .def_readonly("feature_dim", &FeatureMapSpec::feature_dim)
      .def_property_readonly("omega", [](const FeatureMapSpec& fm) { return to_numpy(fm.omega); })
      .def("__call__", [](const FeatureMapSpec& fm, const py::array_t<double, py::array::c_style |
                                                                              py::array::forcecast>& x) {
        return to_numpy(apply_features(fm, from_numpy(x)));
      });

  m.def("hr_at_k", &hr_at_k, py::arg("rank"), py::arg("k"));
  m.def("ndcg_at_k", &ndcg_at_k, py::arg("rank"), py::arg("k"));
  m.def(
      "pessimistic_rank",
      [](double target, const std::vector<double>& negatives) { return pessimistic_rank(target, negatives); },
      py::arg("target_score"), py::arg("negative_scores"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one limarec command; returns (exit_code, stdout, stderr).");
}
