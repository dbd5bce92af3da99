#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "simseg/augment.hpp"
#include "simseg/checkpoint.hpp"
#include "simseg/config.hpp"
#include "simseg/losses.hpp"
#include "simseg/metrics.hpp"
#include "simseg/network.hpp"
#include "simseg/phantom.hpp"
#include "simseg/sim.hpp"

namespace py = pybind11;
using namespace simseg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw InputError("expected a 4-d (N, C, H, W) array");
  const Shape4 s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                 static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out({t.n(), t.c(), t.h(), t.w()});
  std::copy(t.vector().begin(), t.vector().end(), out.mutable_data());
  return out;
}

BinaryMask to_mask(const MaskArray& a, std::pair<double, double> spacing) {
  if (a.ndim() != 2) throw InputError("expected a 2-d (H, W) mask");
  BinaryMask m(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
               {spacing.second, spacing.first, 1.0});
  for (py::ssize_t i = 0; i < a.size(); ++i) m[i] = a.data()[i] != 0;
  return m;
}

template <class T>
py::array_t<T> grid_array(const Grid3<T>& g) {
  py::array_t<T> out({g.depth(), g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

DistanceUnits units_of(const std::string& s) {
  if (s == "mm") return DistanceUnits::mm;
  if (s == "pixels") return DistanceUnits::pixels;
  throw ConfigError("units must be 'mm' or 'pixels'");
}

// Slice interaction block with its own parameters, evaluation mode.
struct SimBlock {
  SIMConfig cfg;
  SIMParams params;

  SimBlock(int channels, double alpha, double beta, double gamma,
           int reduction_ratio, int spatial_kernel, const std::string& norm,
           std::uint64_t seed) {
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.gamma = gamma;
    cfg.reduction_ratio = reduction_ratio;
    cfg.spatial_kernel = spatial_kernel;
    cfg.norm = parse_norm_kind(norm);
    cfg.validate();
    params = init_sim_params(channels, cfg, seed);
  }
};

struct PyNetwork {
  SegNetwork net;
};

py::dict metrics_dict(const MetricsRecord& r) {
  py::dict d;
  d["iou"] = r.iou;
  d["dice"] = r.dice;
  d["acc"] = r.acc;
  d["hd95"] = r.hd95 ? py::cast(*r.hd95) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_simseg, m) {
  m.doc() = "PET/CT tumour segmentation with slice interaction";

  static py::exception<Error> error(m, "Error");
  static py::exception<ConfigError> config_error(m, "ConfigError", error.ptr());
  static py::exception<InputError> input_error(m, "InputError", error.ptr());
  static py::exception<DataError> data_error(m, "DataError", error.ptr());
  static py::exception<CheckpointError> checkpoint_error(m, "CheckpointError",
                                                         error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const InputError& e) {
      py::set_error(input_error, e.what());
    } catch (const DataError& e) {
      py::set_error(data_error, e.what());
    } catch (const CheckpointError& e) {
      py::set_error(checkpoint_error, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<SimBlock>(m, "SIM")
      .def(py::init<int, double, double, double, int, int, const std::string&,
                    std::uint64_t>(),
           py::arg("channels"), py::arg("alpha") = 0.3, py::arg("beta") = 0.3,
           py::arg("gamma") = 0.4, py::arg("reduction_ratio") = 2,
           py::arg("spatial_kernel") = 7, py::arg("norm") = "batch",
           py::arg("seed") = 0)
      .def("__call__",
           [](const SimBlock& b, const Array& x) {
             return to_array(sim_forward(to_tensor(x), b.params, b.cfg));
           })
      .def("channel_attention",
           [](const SimBlock& b, const Array& x) {
             const auto r = channel_attention(to_tensor(x), b.params);
             return py::make_tuple(to_array(r.attention), to_array(r.x_ca));
           })
      .def("spatial_attention",
           [](const SimBlock& b, const Array& x) {
             const auto r = spatial_attention(to_tensor(x), b.params);
             return py::make_tuple(to_array(r.attention), to_array(r.x_sa));
           })
      .def("slice_relation", [](const SimBlock& b, const Array& x) {
        return to_array(slice_relation(to_tensor(x), b.params));
      });

  m.def("dice_loss", [](const Array& p, const Array& y) {
    return dice_loss(to_tensor(p), to_tensor(y));
  });
  m.def("bce_loss", [](const Array& p, const Array& y) {
    return bce_loss(to_tensor(p), to_tensor(y));
  });
  m.def("composite_loss", [](const Array& p, const Array& y) {
    return composite_loss(to_tensor(p), to_tensor(y));
  });

  m.def(
      "evaluate_pair",
      [](const MaskArray& p, const MaskArray& g, std::pair<double, double> spacing,
         const std::string& units) {
        return metrics_dict(
            evaluate_pair(to_mask(p, spacing), to_mask(g, spacing), units_of(units)));
      },
      py::arg("pred"), py::arg("target"), py::arg("spacing") = std::pair{1.0, 1.0},
      py::arg("units") = "mm",
      "IoU, Dice, pixel accuracy and HD95 of two 2-d masks; spacing is (row, col) "
      "in mm.");

  m.def(
      "qc_filter",
      [](double volume_cc, double suv_max) {
        const QcResult r = qc_filter(volume_cc, suv_max);
        return py::make_tuple(r.accepted, r.reason);
      },
      py::arg("volume_cc"), py::arg("suv_max"));

  m.def("window_ct", py::overload_cast<double, double, double>(&window_ct),
        py::arg("hu"), py::arg("lo") = -1350.0, py::arg("hi") = 150.0);

  m.def(
      "patient_split",
      [](const std::vector<std::string>& ids, std::array<double, 3> ratios,
         std::uint64_t seed) {
        const SplitSpec s = patient_split(ids, ratios, seed);
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("ids"), py::arg("ratios") = std::array<double, 3>{0.70, 0.15, 0.15},
      py::arg("seed") = 0);

  m.def(
      "augment",
      [](const Array& input, const Array& target, std::uint64_t seed,
         double per_op_prob) {
        SliceSample s{to_tensor(input), to_tensor(target)};
        AugmentConfig cfg;
        cfg.per_op_prob = per_op_prob;
        cfg.validate();
        Rng rng(seed);
        const SliceSample out = apply_pipeline(s, cfg, rng);
        return py::make_tuple(to_array(out.input), to_array(out.target));
      },
      py::arg("input"), py::arg("target"), py::arg("seed"),
      py::arg("per_op_prob") = 0.5,
      "Affine, flip and crop applied jointly to a (1, C, H, W) image and its "
      "(1, 1, H, W) mask.");

  m.def(
      "generate_phantom",
      [](std::uint64_t seed, double motion_amplitude_mm, double tumor_suv_peak) {
        PhantomConfig cfg;
        cfg.motion_amplitude_mm = motion_amplitude_mm;
        cfg.tumor_suv_peak = tumor_suv_peak;
        const PhantomStudy p = generate_phantom(cfg, seed);
        py::dict d;
        d["ct"] = grid_array(p.study.ct);
        d["pet"] = grid_array(p.study.pet);
        d["gtv"] = grid_array(p.gtv);
        d["igtv"] = grid_array(p.igtv);
        const Spacing s = p.study.ct.spacing();
        d["spacing"] = py::make_tuple(s.z, s.y, s.x);
        return d;
      },
      py::arg("seed"), py::arg("motion_amplitude_mm") = 8.0,
      py::arg("tumor_suv_peak") = 8.0,
      "Synthetic study as (D, H, W) arrays: ct (HU), pet (SUV), gtv, igtv.");

  py::class_<PyNetwork>(m, "Network")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             const NetworkConfig cfg =
                 config_json.empty() ? NetworkConfig::stack_25d(true)
                                     : network_config_from_json(Json::parse(config_json));
             return PyNetwork{build_network(cfg, seed)};
           }),
           py::arg("config_json") = "", py::arg("seed") = 0)
      .def_static("load",
                  [](const std::string& path) {
                    return PyNetwork{restore_network(load_checkpoint(path))};
                  })
      .def("__call__",
           [](const PyNetwork& n, const Array& pet, const Array& ct) {
             return to_array(forward(n.net, to_tensor(pet), to_tensor(ct)));
           },
           py::arg("pet"), py::arg("ct"), "Logits (N, 1, H, W).")
      .def("inflate",
           [](const PyNetwork& n, const std::string& config_json, std::uint64_t seed) {
             const NetworkConfig cfg =
                 config_json.empty() ? NetworkConfig::stack_25d(true)
                                     : network_config_from_json(Json::parse(config_json));
             return PyNetwork{inflate_2d_to_25d(n.net, cfg, seed)};
           },
           py::arg("config_json") = "", py::arg("seed") = 0)
      .def("save",
           [](PyNetwork& n, const std::string& path, const std::string& stage) {
             save_checkpoint(make_checkpoint(n.net, {stage, 0, 0.0, 0}), path);
           },
           py::arg("path"), py::arg("stage") = "scratch")
      .def_property_readonly("config_json",
                             [](const PyNetwork& n) { return to_json(n.net.config()).dump(); })
      .def_property_readonly("parameter_count",
                             [](const PyNetwork& n) { return n.net.parameter_count(); });

  m.def("network_config_json", [](const std::string& mode, bool use_sim) {
    const NetworkConfig c = parse_input_mode(mode) == InputMode::slice2d
                                ? NetworkConfig::slice_2d()
                                : NetworkConfig::stack_25d(use_sim);
    return to_json(c).dump();
  }, py::arg("mode") = "2.5d", py::arg("use_sim") = true);
}
