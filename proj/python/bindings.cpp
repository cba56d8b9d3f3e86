// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Boxes cross the boundary as (x, y, w, h) tuples in pixels.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <tuple>

#include "fusetrack/checkpoint.hpp"
#include "fusetrack/config.hpp"
#include "fusetrack/io.hpp"
#include "fusetrack/losses.hpp"
#include "fusetrack/metrics.hpp"
#include "fusetrack/selftest.hpp"
#include "fusetrack/three_stage.hpp"
#include "fusetrack/track.hpp"

namespace py = pybind11;
using namespace fusetrack;

namespace {

using Xywh4 = std::tuple<double, double, double, double>;

BoundingBox box_in(const Xywh4& v) {
  return BoundingBox::from_xywh(std::get<0>(v), std::get<1>(v), std::get<2>(v), std::get<3>(v));
}

Xywh4 box_out(const BoundingBox& b) { return {b.x0(), b.y0(), b.w, b.h}; }

py::array_t<double> image_out(const Tensor& t) {
  py::array_t<double> a({t.dim(0), t.dim(1), t.dim(2)});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

py::dict report_out(const EvalReport& r) {
  py::dict d;
  d["pr"] = r.pr;
  d["sr"] = r.sr;
  d["mpr"] = r.mpr;
  d["msr"] = r.msr;
  d["frames"] = r.frame_count;
  return d;
}

ScenarioSpec scenario_spec(const RunConfig& config, std::uint64_t seed,
                           const std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>>& spans) {
  ScenarioSpec spec = config.data.scene;
  spec.seed = seed;
  for (const auto& [m, kind, begin, end] : spans) {
    DegradationSpan s;
    if (m == "rgb") {
      s.modality = Modality::rgb;
    } else if (m == "thermal") {
      s.modality = Modality::thermal;
    } else {
      throw py::value_error("unknown modality '" + m + "'");
    }
    s.kind = parse_degradation(kind);
    s.begin = begin;
    s.end = end;
    spec.spans.push_back(s);
  }
  return spec;
}

// Model plus the run config it was built from. The trainer and sample stream
// persist across train() calls, so train(a) then train(b) equals train(a + b).
class Tracker {
 public:
  explicit Tracker(RunConfig config) : config_(std::move(config)), model_(make_model(config_)) {}
  Tracker(RunConfig config, TrackerModel model) : config_(std::move(config)), model_(std::move(model)) {}

  std::vector<py::dict> train(std::size_t steps) {
    if (!trainer_) {
      source_ = std::make_unique<SampleSource>(make_training_source(config_));
      trainer_ = std::make_unique<Trainer>(model_, config_.train);
    }
    std::vector<TrainCurveRow> curve;
    for (std::size_t i = 0; i < steps; ++i) {
      const auto p = trainer_->step(source_->batch(config_.train.batch));
      curve.push_back({trainer_->steps_done(), p.rgb.total, p.thermal.total, p.lambda_rgb, p.lambda_t, p.total});
    }

    std::vector<py::dict> rows;
    for (const auto& r : curve) {
      py::dict d;
      d["step"] = r.step;
      d["l_rgb"] = r.l_rgb;
      d["l_t"] = r.l_t;
      d["lambda_rgb"] = r.lambda_rgb;
      d["lambda_t"] = r.lambda_t;
      d["total"] = r.total;
      rows.push_back(d);
    }
    return rows;
  }

  std::vector<py::dict> track(std::uint64_t seed,
                              const std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>>& spans) {
    const auto scenario = make_scenario(scenario_spec(config_, seed, spans));
    const auto outs = track_sequence(
        model_, [&](std::size_t t) { return render_frame(scenario, t); }, scenario.boxes.size(),
        scenario.boxes.front(), config_.track_options());
    std::vector<py::dict> rows;
    for (std::size_t t = 0; t < outs.size(); ++t) {
      const auto& o = outs[t];
      py::dict d;
      d["box"] = box_out(o.box);
      d["rgb_box"] = box_out(o.both_boxes[0]);
      d["thermal_box"] = box_out(o.both_boxes[1]);
      d["chosen"] = modality_name(o.chosen);
      d["lambda_rgb"] = o.reliability.lambda_rgb;
      d["lambda_t"] = o.reliability.lambda_t;
      d["gt"] = box_out(scenario.boxes[t]);
      rows.push_back(d);
    }
    return rows;
  }

  py::dict evaluate_held_out() {
    const auto set = make_held_out_set(config_.eval.held_out);
    const auto r = evaluate_set(model_, set, config_.track_options());
    py::dict d = report_out(r.report);
    d["degraded_frames"] = r.degraded_frames;
    d["clean_choices"] = r.clean_choices;
    d["selection_rate"] = r.selection_rate();
    return d;
  }

  void save(const std::string& path) const {
    Checkpoint ckpt = make_checkpoint(model_, trainer_ ? &trainer_->optimizer() : nullptr);
    ckpt.run_config = config_to_text(config_);
    save_checkpoint(path, ckpt);
  }

  static Tracker load(const std::string& path) {
    const auto ckpt = load_checkpoint(path);
    RunConfig config = ckpt.run_config.empty() ? RunConfig{} : parse_config(ckpt.run_config);
    config.model = ckpt.config;
    return Tracker(std::move(config), model_from_checkpoint(ckpt));
  }

  std::string digest() const { return checkpoint_digest(make_checkpoint(model_)); }
  std::size_t parameter_count() const { return model_.parameters().element_count(); }
  std::string config_text() const { return config_to_text(config_); }

 private:
  RunConfig config_;
  TrackerModel model_;
  std::unique_ptr<SampleSource> source_;
  std::unique_ptr<Trainer> trainer_;
};

}  // namespace

PYBIND11_MODULE(_fusetrack, m) {
  m.doc() = "Single-stage RGB-thermal tracker";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<VersionError>(m, "VersionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def("iou", [](const Xywh4& a, const Xywh4& b) { return iou(box_in(a), box_in(b)); });
  m.def("center_error", [](const Xywh4& a, const Xywh4& b) { return center_error(box_in(a), box_in(b)); });

  m.def(
      "evaluate",
      [](const std::vector<Xywh4>& pred, const std::vector<std::optional<Xywh4>>& rgb_gt,
         const std::optional<std::vector<std::optional<Xywh4>>>& thermal_gt, double tau) {
        auto conv = [](const std::vector<std::optional<Xywh4>>& v) {
          std::vector<std::optional<BoundingBox>> out;
          for (const auto& b : v) out.push_back(b ? std::optional(box_in(*b)) : std::nullopt);
          return out;
        };
        std::vector<BoundingBox> p;
        for (const auto& b : pred) p.push_back(box_in(b));
        const auto ann =
            merge_annotations(conv(rgb_gt), thermal_gt ? conv(*thermal_gt) : std::vector<std::optional<BoundingBox>>{});
        return report_out(evaluate(p, ann, tau));
      },
      py::arg("pred"), py::arg("rgb_gt"), py::arg("thermal_gt") = py::none(),
      py::arg("tau") = kDefaultPrecisionThreshold);

  m.def(
      "total_loss",
      [](double l_rgb, double l_t, double r_rgb, double r_t) {
        const auto t = total_loss(l_rgb, l_t, r_rgb, r_t);
        return std::make_tuple(t.total, t.lambda_rgb, t.lambda_t);
      },
      py::arg("l_rgb"), py::arg("l_t"), py::arg("r_rgb"), py::arg("r_t"));

  m.def("selftest", [] {
    std::vector<py::dict> rows;
    for (const auto& r : run_selftest()) {
      py::dict d;
      d["name"] = r.name;
      d["passed"] = r.passed;
      d["value"] = r.value;
      d["tolerance"] = r.tolerance;
      rows.push_back(d);
    }
    return rows;
  });

  m.def(
      "render_frame",
      [](const std::string& config_text, std::uint64_t seed, std::size_t t,
         const std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>>& spans) {
        const auto scenario = make_scenario(scenario_spec(parse_config(config_text), seed, spans));
        const auto frame = render_frame(scenario, t);
        return py::make_tuple(image_out(frame.rgb), image_out(frame.thermal), box_out(scenario.boxes.at(t)));
      },
      py::arg("config_text"), py::arg("seed"), py::arg("t"),
      py::arg("spans") = std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>>{});

  m.def(
      "bench",
      [](const std::string& config_text, std::size_t dim, std::size_t warmup, std::size_t samples) {
        ModelConfig mc = parse_config(config_text).model;
        mc.embedding.dim = dim;
        const auto row = measure_latency(mc, warmup, samples, 7);
        py::dict d;
        d["dim"] = row.dim;
        d["unified_ms"] = row.unified_ms;
        d["three_stage_ms"] = row.three_stage_ms;
        d["ratio"] = row.ratio();
        d["samples"] = row.samples;
        return d;
      },
      py::arg("config_text"), py::arg("dim"), py::arg("warmup") = 10, py::arg("samples") = 30);

  m.def("default_config", [] { return config_to_text(RunConfig{}); });
  m.def("load_config", [](const std::string& path) { return config_to_text(load_config(path)); });
  m.def("parse_config", [](const std::string& text) { return config_to_text(parse_config(text)); });

  using Spans = std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>>;
  py::class_<Tracker>(m, "Tracker")
      .def(py::init([](const std::string& config_text) { return Tracker(parse_config(config_text)); }),
           py::arg("config_text"))
      .def_static("load", &Tracker::load, py::arg("path"))
      .def("train", &Tracker::train, py::arg("steps"))
      .def("track", &Tracker::track, py::arg("seed"), py::arg("spans") = Spans{})
      .def("evaluate_held_out", &Tracker::evaluate_held_out)
      .def("save", &Tracker::save, py::arg("path"))
      .def("digest", &Tracker::digest)
      .def_property_readonly("parameter_count", &Tracker::parameter_count)
      .def_property_readonly("config_text", &Tracker::config_text);
}
