#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "radarvel/eval.hpp"
#include "radarvel/gradcheck.hpp"
#include "radarvel/training.hpp"

namespace py = pybind11;
using namespace radarvel;

namespace {

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["AP"] = r.ap;
  d["AP4.0"] = r.ap4;
  d["AP_per_threshold"] = r.ap_per_threshold;
  d["AVE"] = r.ave;
  d["AVE_tangential"] = r.ave_tangential;
  d["AVE_radial"] = r.ave_radial;
  d["TP"] = r.tp;
  d["FP"] = r.fp;
  d["FN"] = r.fn;
  return d;
}

const std::vector<FramePairRecord>& split_of(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  throw ValidationError("split must be 'train' or 'val'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Radar velocity learning: simulation, matching, metrics and training";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<OBB>(m, "OBB")
      .def(py::init([](const Vec3& center, double length, double width, double height, double yaw,
                       const Vec2& vel, double score_fg) {
             return make_obb(center, length, width, height, yaw, vel, score_fg);
           }),
           py::arg("center"), py::arg("length") = 4.5, py::arg("width") = 1.9, py::arg("height") = 1.6,
           py::arg("yaw") = 0.0, py::arg("vel") = Vec2::Zero(), py::arg("score_fg") = 1.0)
      .def_readwrite("center", &OBB::center)
      .def_readwrite("length", &OBB::length)
      .def_readwrite("width", &OBB::width)
      .def_readwrite("height", &OBB::height)
      .def_readwrite("yaw", &OBB::yaw)
      .def_readwrite("vel", &OBB::vel)
      .def_readwrite("score_fg", &OBB::score_fg)
      .def_readwrite("score_bg", &OBB::score_bg)
      .def("__eq__", [](const OBB& a, const OBB& b) { return a == b; })
      .def("__repr__", [](const OBB& b) {
        return "OBB(center=(" + std::to_string(b.center.x()) + ", " + std::to_string(b.center.y()) +
               "), vel=(" + std::to_string(b.vel.x()) + ", " + std::to_string(b.vel.y()) +
               "), score_fg=" + std::to_string(b.score_fg) + ")";
      });

  m.def("update_box", &update_box, py::arg("box"), py::arg("dt"));
  m.def("bev_distance", &bev_distance);
  m.def("filter_confident", &filter_confident, py::arg("boxes"), py::arg("eps_conf") = 0.5);
  m.def(
      "match_boxes",
      [](const std::vector<OBB>& a, const std::vector<OBB>& b, double max_distance) {
        std::vector<std::tuple<int, int, double>> out;
        for (const auto& p : match_boxes(a, b, max_distance).pairs) out.emplace_back(p.a, p.b, p.distance);
        return out;
      },
      py::arg("a"), py::arg("b"), py::arg("max_distance") = std::numeric_limits<double>::infinity());
  m.def(
      "velocity_loss",
      [](const std::vector<OBB>& vel_boxes, const std::vector<OBB>& det_boxes, double eps_conf, double dt_gap,
         double c_vel) {
        SelfSupConfig cfg;
        cfg.eps_conf = eps_conf;
        cfg.dt_gap = dt_gap;
        cfg.c_vel = c_vel;
        cfg.validate();
        const VelocityLoss l = velocity_loss(vel_boxes, det_boxes, cfg);
        std::vector<std::tuple<int, int, double>> pairs;
        for (const auto& p : l.matches.pairs) pairs.emplace_back(p.a, p.b, p.distance);
        py::dict d;
        d["value"] = l.value;
        d["matches"] = pairs;
        d["vel_grad"] = l.vel_grad;
        return d;
      },
      py::arg("vel_boxes"), py::arg("det_boxes"), py::arg("eps_conf") = 0.5, py::arg("dt_gap") = 0.6,
      py::arg("c_vel") = 0.05);
  m.def(
      "match_for_eval",
      [](const std::vector<OBB>& preds, const std::vector<OBB>& gts, double threshold) {
        const EvalMatch e = match_for_eval(preds, gts, threshold);
        py::dict d;
        d["tp"] = e.tp;
        d["fp"] = e.fp;
        d["fn"] = e.fn;
        return d;
      },
      py::arg("preds"), py::arg("gts"), py::arg("threshold"));
  m.def(
      "evaluate_frames",
      [](const std::vector<std::pair<std::vector<OBB>, std::vector<OBB>>>& frames) {
        std::vector<EvalFrame> ef;
        for (const auto& [p, g] : frames) ef.push_back({p, g});
        return report_dict(evaluate_frames(ef, EvalConfig{}));
      },
      py::arg("frames"), "frames: list of (predictions, ground truth) box lists");
  m.def(
      "doppler",
      [](const Vec3& point, const Vec2& point_vel, const Vec3& sensor_pose, const Vec2& sensor_vel) {
        const DopplerResult r = doppler(point, point_vel, Pose2D{sensor_pose.x(), sensor_pose.y(), sensor_pose.z()},
                                        sensor_vel);
        return std::make_pair(r.vr_raw, r.vr_comp);
      },
      py::arg("point"), py::arg("point_vel"), py::arg("sensor_pose"), py::arg("sensor_vel"),
      "Returns (raw, ego-compensated) radial velocity; sensor_pose is (x, y, yaw).");

  m.def(
      "simulate",
      [](const std::string& scenario_json, const std::filesystem::path& out, int n_pairs, double train_fraction) {
        const ScenarioConfig cfg = nlohmann::json::parse(scenario_json).get<ScenarioConfig>();
        py::gil_scoped_release release;
        make_dataset(cfg, {n_pairs, train_fraction}, out);
      },
      py::arg("scenario_json") = "{}", py::arg("out"), py::arg("n_pairs") = 100, py::arg("train_fraction") = 0.8);
  m.def(
      "dataset_sizes",
      [](const std::filesystem::path& dir) {
        const Dataset d = load_dataset(dir);
        return std::make_pair(d.train.size(), d.val.size());
      },
      py::arg("data"));
  m.def(
      "train",
      [](const std::string& config_json, const std::filesystem::path& data, const std::filesystem::path& out) {
        const TrainConfig cfg = nlohmann::json::parse(config_json).get<TrainConfig>();
        py::gil_scoped_release release;
        train_model(cfg, load_dataset(data), out);
      },
      py::arg("config_json"), py::arg("data"), py::arg("out"));
  m.def(
      "evaluate",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& data, const std::string& split) {
        const Checkpoint c = load_checkpoint(ckpt);
        const Dataset d = load_dataset(data);
        return report_dict(evaluate(c, split_of(d, split), EvalConfig{}));
      },
      py::arg("ckpt"), py::arg("data"), py::arg("split") = "val");
  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        std::vector<std::tuple<std::string, double, bool>> out;
        for (const auto& r : run_gradcheck(seed)) out.emplace_back(r.name, r.max_rel_error, r.passed);
        return out;
      },
      py::arg("seed") = 1);
}
