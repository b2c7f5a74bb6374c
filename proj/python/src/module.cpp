#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "geoecon/align.hpp"
#include "geoecon/dataset.hpp"
#include "geoecon/error.hpp"
#include "geoecon/geo.hpp"
#include "geoecon/pipeline.hpp"
#include "geoecon/raster.hpp"
#include "geoecon/store.hpp"
#include "geoecon/synth.hpp"
#include "geoecon/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace geoecon;

namespace {

// JSON crosses the boundary through the stdlib json module; the payloads are
// small row sets and specs, so the round trip is not a bottleneck.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

template <typename Row>
py::list rows_to_py(const std::vector<Row>& rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(r.to_json());
  return to_py(out);
}

BBox bbox_from(const std::vector<double>& v) {
  if (v.size() != 4) throw ParameterError("bbox must be [min_lat, min_lon, max_lat, max_lon]");
  return {{v[0], v[1]}, {v[2], v[3]}};
}

py::tuple tile_tuple(const TileId& t) { return py::make_tuple(t.zoom, t.x, t.y); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of geoecon: geo utilities, corpus tools, task runs and the result store";

  static py::exception<Error> error_type(m, "GeoEconError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // args = (code, message)
      PyErr_SetObject(error_type.ptr(), py::make_tuple(e.code(), e.what()).ptr());
    }
  });

  m.def(
      "latlon_to_tile", [](double lat, double lon, int zoom) { return tile_tuple(latlon_to_tile({lat, lon}, zoom)); },
      py::arg("lat"), py::arg("lon"), py::arg("zoom") = kPairingZoom, "Web-Mercator tile (zoom, x, y) of a point");
  m.def(
      "tile_center",
      [](int zoom, std::int64_t x, std::int64_t y) {
        const GeoPoint c = tile_center({zoom, x, y});
        return py::make_tuple(c.lat, c.lon);
      },
      py::arg("zoom"), py::arg("x"), py::arg("y"));
  m.def(
      "tile_bbox",
      [](int zoom, std::int64_t x, std::int64_t y) {
        const BBox b = tile_to_bbox({zoom, x, y});
        return py::make_tuple(b.min.lat, b.min.lon, b.max.lat, b.max.lon);
      },
      py::arg("zoom"), py::arg("x"), py::arg("y"));
  m.def(
      "haversine_km",
      [](double lat1, double lon1, double lat2, double lon2) { return haversine_km({lat1, lon1}, {lat2, lon2}); },
      py::arg("lat1"), py::arg("lon1"), py::arg("lat2"), py::arg("lon2"));
  m.def(
      "point_in_polygon",
      [](double lat, double lon, const std::vector<std::pair<double, double>>& ring) {
        CountyPolygon poly;
        for (const auto& [a, b] : ring) poly.ring.push_back({a, b});
        return point_in_polygon({lat, lon}, poly);
      },
      py::arg("lat"), py::arg("lon"), py::arg("ring"), "Even-odd containment; points on the boundary are inside");
  m.def(
      "r_squared",
      [](const std::vector<double>& yhat, const std::vector<double>& y) { return r_squared(yhat, y); },
      py::arg("yhat"), py::arg("y"));

  m.def(
      "synth",
      [](const fs::path& out, const py::dict& options) {
        const SynthOptions o = SynthOptions::from_json(from_py(options));
        SynthCorpus c;
        {
          py::gil_scoped_release release;
          c = synth_corpus(o, out);
        }
        const BBox& r = c.region;
        return to_py({{"satellites", c.satellites.size()},
                      {"streetviews", c.streetviews.size()},
                      {"counties", c.counties.size()},
                      {"region", {r.min.lat, r.min.lon, r.max.lat, r.max.lon}}});
      },
      py::arg("out"), py::arg("options") = py::dict(), "Write a seeded synthetic corpus and return a summary");

  m.def(
      "align",
      [](const fs::path& corpus, const std::string& period, std::optional<int> heading, double max_distance_km,
         double window_km) {
        const CorpusPaths paths{corpus};
        PairingOptions opt;
        opt.heading = heading;
        opt.max_distance_km = max_distance_km;
        opt.label_window_km = window_km;
        auto keep = [&](const ImageRecord& r) { return r.period.empty() || r.period == period; };
        std::vector<ImageRecord> sats, svs;
        for (auto& r : read_manifest(paths.satellites()))
          if (keep(r)) sats.push_back(std::move(r));
        for (auto& r : read_manifest(paths.streetviews()))
          if (keep(r)) svs.push_back(std::move(r));
        return rows_to_py(build_pairs(sats, svs, load_nightlight_raster(paths.raster(period)), opt));
      },
      py::arg("corpus"), py::arg("period") = "", py::arg("heading") = 0, py::arg("max_distance_km") = 5.0,
      py::arg("window_km") = 5.0, "Pair every satellite tile with its nearest street view and label it");

  m.def(
      "train",
      [](const fs::path& corpus, const py::list& pairs_list, const fs::path& out, const py::dict& options) {
        const FitOptions opt = FitOptions::from_json(from_py(options));
        opt.model.validate();
        std::vector<AlignedPair> pairs;
        for (const auto& p : from_py(pairs_list)) pairs.push_back(AlignedPair::from_json(p));
        FitResult result;
        {
          py::gil_scoped_release release;
          const auto images = load_pair_images(pairs, CorpusPaths{corpus}, opt.model.image_side);
          result = fit(images, opt);
        }
        json history = json::array();
        for (const auto& e : result.history) history.push_back(e.to_json());
        const json meta = {{"fit_options", opt.to_json()},
                           {"train_ids", result.train_ids},
                           {"val_ids", result.val_ids},
                           {"val_r2", result.val_r2},
                           {"history", history}};
        save_checkpoint(out, result.model.to_checkpoint(meta));
        return to_py({{"val_r2", result.val_r2}, {"history", history}});
      },
      py::arg("corpus"), py::arg("pairs"), py::arg("out"), py::arg("options") = py::dict(),
      "Fit the fusion model on aligned pairs and write a checkpoint");

  m.def(
      "run_task",
      [](const py::dict& spec_dict, const fs::path& store_dir, const fs::path& checkpoint) {
        const TaskSpec spec = TaskSpec::from_json(from_py(spec_dict));
        spec.validate();
        ModelRegistry models;
        models.add(spec.model, checkpoint);
        RunStats stats;
        TaskRecord t;
        {
          py::gil_scoped_release release;
          auto store = Store::open(store_dir);
          t = run_task(spec, *store, models, &stats);
        }
        json out = t.to_json();
        out["stats"] = {{"pairs", stats.pairs},
                        {"skipped", stats.skipped},
                        {"cells", stats.cells},
                        {"counties", stats.counties}};
        return to_py(out);
      },
      py::arg("spec"), py::arg("store"), py::arg("checkpoint"),
      "Run a scoring task headlessly and commit its results to the store");

  py::class_<Store, std::unique_ptr<Store>>(m, "Store", "Journaled result store (read access)")
      .def(py::init([](const fs::path& dir) { return Store::open(dir); }), py::arg("path"))
      .def("tasks", [](const Store& s) { return rows_to_py(s.tasks()); })
      .def("task", [](const Store& s, const std::string& id) { return to_py(s.get_task(id).to_json()); },
           py::arg("task_id"))
      .def("fine_rows", [](const Store& s, const std::string& id) { return rows_to_py(s.fine_rows(id)); },
           py::arg("task_id"))
      .def("county_rows", [](const Store& s) { return rows_to_py(s.county_rows()); })
      .def("events", [](const Store& s, const std::string& id, std::int64_t after) { return rows_to_py(s.events(id, after)); },
           py::arg("task_id"), py::arg("after") = 0)
      .def(
          "heatmap",
          [](const Store& s, const std::vector<double>& bbox, const std::string& period) {
            return rows_to_py(s.query_heatmap(bbox_from(bbox), period));
          },
          py::arg("bbox"), py::arg("period"))
      .def(
          "trend",
          [](const Store& s, const std::string& county, const std::string& from, const std::string& to) {
            return rows_to_py(s.query_trend(county, from, to));
          },
          py::arg("county_id"), py::arg("from_period"), py::arg("to_period"))
      .def("export_task_results", &Store::export_task_results, py::arg("task_id"));

  py::class_<ScoringModel, std::shared_ptr<ScoringModel>>(m, "Model", "Trained scoring model")
      .def(py::init([](const fs::path& checkpoint) {
             return std::make_shared<ScoringModel>(ScoringModel::from_checkpoint(load_checkpoint(checkpoint)));
           }),
           py::arg("checkpoint"))
      .def(
          "score",
          [](const ScoringModel& model, const fs::path& satellite_png, const fs::path& streetview_png) {
            const Image8 sat = decode_image(satellite_png), sv = decode_image(streetview_png);
            py::gil_scoped_release release;
            return model.score(sat, sv);
          },
          py::arg("satellite"), py::arg("streetview"), "Label-scale score of one image pair")
      .def_property_readonly("config", [](const ScoringModel& model) { return to_py(model.model.config.to_json()); })
      .def_property_readonly("parameter_count", [](const ScoringModel& model) { return model.model.parameter_count(); });
}
