#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "sinr/data.hpp"
#include "sinr/eval.hpp"
#include "sinr/train.hpp"

namespace py = pybind11;
using namespace sinr;

namespace {

using LonLat = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

std::vector<GeoCoord> to_coords(const LonLat& lonlat) {
  std::vector<GeoCoord> out;
  out.reserve(static_cast<std::size_t>(lonlat.rows()));
  for (Eigen::Index i = 0; i < lonlat.rows(); ++i) out.emplace_back(lonlat(i, 0), lonlat(i, 1));
  return out;
}

BatchTargets targets(const std::vector<std::uint32_t>& positive, std::uint32_t n_species) {
  BatchTargets t{positive, n_species};
  t.validate();
  return t;
}

py::dict loss_dict(const LossResult& r) {
  py::dict d;
  d["value"] = r.value;
  d["positive_part"] = r.positive_part;
  d["negative_part"] = r.negative_part;
  d["random_part"] = r.random_part;
  d["d_probs"] = r.d_probs;
  d["d_probs_rand"] = r.d_probs_rand;
  d["negative_species"] = r.negative_species;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sinr, m) {
  m.doc() = "Species range models from presence-only observations";

  m.def("encode_coords", [](double lon, double lat) { return encode_coords(GeoCoord(lon, lat)); },
        py::arg("lon"), py::arg("lat"));

  py::class_<GridSpec>(m, "GridSpec")
      .def(py::init<std::uint32_t>(), py::arg("resolution"))
      .def_property_readonly("resolution", &GridSpec::resolution)
      .def_property_readonly("n_lon", &GridSpec::n_lon)
      .def_property_readonly("n_lat", &GridSpec::n_lat)
      .def_property_readonly("n_cells", &GridSpec::n_cells)
      .def("cell_of", [](const GridSpec& g, double lon, double lat) { return g.cell_of(GeoCoord(lon, lat)); })
      .def("cell_centroid", [](const GridSpec& g, std::size_t i) {
        const GeoCoord c = g.cell_centroid(i);
        return std::make_pair(c.lon(), c.lat());
      });

  py::class_<ObservationSet>(m, "ObservationSet")
      .def(py::init<>())
      .def("add", [](ObservationSet& o, const std::string& id, double lon, double lat) {
        o.add(id, GeoCoord(lon, lat));
      })
      .def("__len__", &ObservationSet::size)
      .def_property_readonly("species_ids", &ObservationSet::species_ids)
      .def("counts", &ObservationSet::counts)
      .def("records", [](const ObservationSet& o) {
        std::vector<std::tuple<std::string, double, double>> out;
        for (const auto& r : o.records()) {
          out.emplace_back(o.species_ids()[r.species], r.location.lon(), r.location.lat());
        }
        return out;
      })
      .def("save", [](const ObservationSet& o, const std::string& path) { save_observations(path, o); });

  m.def("load_observations", [](const std::string& path) {
    auto load = load_observations(path);
    std::vector<std::pair<std::size_t, std::string>> rejected;
    for (const auto& r : load.rejected) rejected.emplace_back(r.line, r.reason);
    return std::make_pair(std::move(load.observations), rejected);
  });
  m.def("filter_min_count", &filter_min_count, py::arg("obs"), py::arg("min_count"));
  m.def("subsample_cap", &subsample_cap, py::arg("obs"), py::arg("k"), py::arg("seed"));
  m.def("select_species", &select_species, py::arg("obs"), py::arg("keep"), py::arg("extra_random"),
        py::arg("seed"));

  m.def("bernoulli_entropy", &bernoulli_entropy);
  m.def(
      "loss",
      [](const std::string& variant, const Matrix<double>& probs, const Matrix<double>& probs_rand,
         const std::vector<std::uint32_t>& positive, double lambda,
         std::optional<std::vector<std::uint32_t>> negatives) {
        const LossVariant v = parse_loss_variant(variant);
        const BatchTargets t = targets(positive, static_cast<std::uint32_t>(probs.rows()));
        if (negatives) {
          if (v == LossVariant::an_slds) return loss_dict(loss_an_slds(probs, t, *negatives));
          if (v == LossVariant::me_slds) return loss_dict(loss_me_slds(probs, t, *negatives));
          throw std::invalid_argument("negatives only apply to the SLDS variants");
        }
        Rng rng = derive_rng(0, 0);
        return loss_dict(compute_loss(LossConfig{v, lambda}, probs, probs_rand, t, rng));
      },
      py::arg("variant"), py::arg("probs"), py::arg("probs_rand") = Matrix<double>(),
      py::arg("positive"), py::arg("lam") = 2048.0, py::arg("negatives") = py::none(),
      "Loss of n_species x batch predictions; SLDS variants draw negatives from a fixed stream "
      "unless they are given.");

  py::class_<Model>(m, "Model")
      .def_property_readonly("species_ids", [](const Model& mo) { return mo.species_ids; })
      .def_property_readonly("hidden_dim", [](const Model& mo) { return mo.config.hidden_dim; })
      .def_property_readonly("n_residual_layers", [](const Model& mo) { return mo.config.n_residual_layers; })
      .def_property_readonly("n_params", [](const Model& mo) { return mo.params.size(); })
      .def("save", [](const Model& mo, const std::string& path) { save_model(path, mo); })
      .def_static("load", &load_model)
      .def("predict", [](const Model& mo, const LonLat& lonlat) {
        // Coordinate-input models only.
        return SinrPredictor(mo).predict(to_coords(lonlat));
      }, py::arg("lonlat"), "n_species x n presence scores for an n x 2 array of lon, lat.")
      .def("features", [](const Model& mo, const LonLat& lonlat) {
        return SinrPredictor(mo).features(to_coords(lonlat));
      }, py::arg("lonlat"));

  m.def(
      "train",
      [](const ObservationSet& obs, const std::string& loss, double lam, std::uint32_t epochs,
         std::size_t batch_size, double lr, std::uint32_t hidden_dim, std::uint32_t layers,
         double dropout, std::uint64_t seed, std::optional<std::size_t> cap_per_species,
         bool identity) {
        TrainConfig c;
        c.epochs = epochs;
        c.initial_lr = lr;
        c.loss = {parse_loss_variant(loss), lam};
        c.net.hidden_dim = hidden_dim;
        c.net.n_residual_layers = identity ? 0 : layers;
        c.net.dropout_p = dropout;
        c.net.encoder = identity ? EncoderKind::identity : EncoderKind::residual_mlp;
        c.sampler.batch_size = batch_size;
        c.sampler.cap_per_species = cap_per_species;
        c.master_seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c, obs);
        }
        return std::make_pair(std::move(r.model), r.log.epoch_mean_losses);
      },
      py::arg("obs"), py::arg("loss") = "an-full", py::arg("lam") = 2048.0, py::arg("epochs") = 10,
      py::arg("batch_size") = 2048, py::arg("lr") = 5e-4, py::arg("hidden_dim") = 256,
      py::arg("layers") = 4, py::arg("dropout") = 0.5, py::arg("seed") = 0,
      py::arg("cap_per_species") = py::none(), py::arg("identity") = false,
      "Returns (model, per-epoch mean loss).");
  m.def("lr_at_epoch", &lr_at_epoch);

  m.def("average_precision", [](const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    return average_precision(s, l);
  });
  m.def("f1_max_threshold", [](const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
    return f1_max_threshold(s, l);
  });
  m.def("map_task", [](const Model& mo, const std::string& eval_grid_path) {
    const MapReport r = map_task(SinrPredictor(mo), load_eval_grid(eval_grid_path));
    std::vector<std::pair<std::string, double>> per_species;
    for (const auto& s : r.species) per_species.emplace_back(s.species_id, s.ap);
    return std::make_pair(r.map, per_species);
  }, py::arg("model"), py::arg("eval_grid_path"));
  m.def("geo_prior_delta", [](const Model& mo, const std::string& scores_path) {
    return geo_prior_delta(load_classifier_scores(scores_path), SinrPredictor(mo)).delta;
  }, py::arg("model"), py::arg("scores_path"));

  py::class_<RidgeFit>(m, "RidgeFit")
      .def_readonly("weights", &RidgeFit::weights)
      .def_readonly("intercept", &RidgeFit::intercept)
      .def_readonly("alpha", &RidgeFit::alpha)
      .def("predict", &RidgeFit::predict);
  m.def("ridge_fit", &ridge_fit, py::arg("x"), py::arg("y"), py::arg("alpha"));
  m.def("r2_score", &r2_score);
}
