#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "tparn/checkpoint.hpp"
#include "tparn/framing.hpp"
#include "tparn/loss.hpp"
#include "tparn/model.hpp"
#include "tparn/spatializer.hpp"
#include "tparn/train.hpp"

namespace py = pybind11;
using namespace tparn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Waveform waveform_from_array(const Array& arr, int sample_rate = 16000) {
  if (arr.ndim() == 1) {
    Waveform w(1, arr.shape(0), sample_rate);
    std::memcpy(w.samples.data(), arr.data(), sizeof(double) * arr.shape(0));
    return w;
  }
  if (arr.ndim() != 2) throw std::invalid_argument("expected a [channels, samples] array");
  Waveform w(static_cast<int>(arr.shape(0)), arr.shape(1), sample_rate);
  std::memcpy(w.samples.data(), arr.data(), sizeof(double) * w.samples.size());
  return w;
}

Array array_from_waveform(const Waveform& w) {
  Array arr({static_cast<py::ssize_t>(w.channels), static_cast<py::ssize_t>(w.num_samples)});
  std::memcpy(arr.mutable_data(), w.samples.data(), sizeof(double) * w.samples.size());
  return arr;
}

Point3 to_point(const std::array<double, 3>& p) { return p; }

// Config + parameters behind one handle, mirroring the checkpoint layout.
class Model {
 public:
  Model(const TparnConfig& cfg, std::uint64_t seed) : config_(cfg) {
    validate_config(config_);
    Rng rng(seed);
    params_ = make_tparn_params(config_, rng);
    params_.refresh_gate_caches();
  }

  explicit Model(Checkpoint ck) : config_(std::move(ck.config)), params_(std::move(ck.params)) {}

  Array forward(const Array& x) const {
    const Waveform w = waveform_from_array(x, config_.sample_rate);
    return array_from_waveform(tparn_forward(w, params_, config_, /*eval_mode=*/true));
  }

  long num_params() const { return count_params(params_); }

  std::vector<std::pair<std::string, long>> param_report() const { return param_count_report(params_); }

  void save(const std::string& path) const { save_checkpoint(path, config_, params_, {}); }

  static Model load(const std::string& path) { return Model(load_checkpoint(path)); }

  const TparnConfig& config() const { return config_; }

 private:
  TparnConfig config_;
  TparnParams params_;
};

}  // namespace

PYBIND11_MODULE(_tparn, m) {
  m.doc() = "triple-path attentive recurrent network core";

  py::class_<TparnConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("channels", &TparnConfig::channels)
      .def_readwrite("frame_size", &TparnConfig::frame_size)
      .def_readwrite("frame_shift", &TparnConfig::frame_shift)
      .def_readwrite("chunk_size", &TparnConfig::chunk_size)
      .def_readwrite("chunk_shift", &TparnConfig::chunk_shift)
      .def_readwrite("feature_dim", &TparnConfig::feature_dim)
      .def_readwrite("num_blocks", &TparnConfig::num_blocks)
      .def_readwrite("spatial_blocks", &TparnConfig::spatial_blocks)
      .def_readwrite("reference_channel", &TparnConfig::reference_channel)
      .def_readwrite("dropout_rate", &TparnConfig::dropout_rate)
      .def_readwrite("sample_rate", &TparnConfig::sample_rate)
      .def_property(
          "spatial_variant", [](const TparnConfig& c) { return std::string(to_string(c.spatial_variant)); },
          [](TparnConfig& c, const std::string& s) { c.spatial_variant = spatial_variant_from_string(s); })
      .def_property(
          "spatial_location",
          [](const TparnConfig& c) { return std::string(to_string(c.spatial_location)); },
          [](TparnConfig& c, const std::string& s) { c.spatial_location = spatial_location_from_string(s); })
      .def_property(
          "output_mode", [](const TparnConfig& c) { return std::string(to_string(c.output_mode)); },
          [](TparnConfig& c, const std::string& s) { c.output_mode = output_mode_from_string(s); });

  py::class_<Model>(m, "Model")
      .def(py::init<const TparnConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def("forward", &Model::forward, py::arg("mixture"),
           "Enhance a [channels, samples] array; returns all channels (MIMO/SISO) or one (MISO).")
      .def("num_params", &Model::num_params)
      .def("param_report", &Model::param_report)
      .def("save", &Model::save, py::arg("path"))
      .def_static("load", &Model::load, py::arg("path"))
      .def_property_readonly("config", &Model::config);

  m.def(
      "frame_signal",
      [](const Array& x, int frame_size, int frame_shift) {
        const FrameTensor f = frame_signal(waveform_from_array(x), frame_size, frame_shift);
        Array frames({static_cast<py::ssize_t>(f.channels), static_cast<py::ssize_t>(f.num_frames),
                      static_cast<py::ssize_t>(f.frame_size)});
        std::memcpy(frames.mutable_data(), f.data.data(), sizeof(double) * f.data.size());
        return py::make_tuple(frames, f.pad_len);
      },
      py::arg("signal"), py::arg("frame_size"), py::arg("frame_shift"));

  m.def(
      "overlap_add_frames",
      [](const Array& frames, int frame_shift, long pad_len, long original_n) {
        if (frames.ndim() != 3) throw std::invalid_argument("expected [channels, frames, frame_size]");
        FrameTensor f;
        f.channels = static_cast<int>(frames.shape(0));
        f.num_frames = frames.shape(1);
        f.frame_size = static_cast<int>(frames.shape(2));
        f.frame_shift = frame_shift;
        f.pad_len = pad_len;
        f.data.assign(frames.data(), frames.data() + frames.size());
        return array_from_waveform(overlap_add_frames(f, original_n));
      },
      py::arg("frames"), py::arg("frame_shift"), py::arg("pad_len"), py::arg("original_n"));

  m.def(
      "stft",
      [](const Array& x, int fft_size, int hop) {
        const Spectrogram s = stft(waveform_from_array(x), fft_size, hop);
        const std::vector<py::ssize_t> shape = {s.channels, static_cast<py::ssize_t>(s.num_frames),
                                                s.num_bins};
        Array re(shape), im(shape);
        std::memcpy(re.mutable_data(), s.re.data(), sizeof(double) * s.re.size());
        std::memcpy(im.mutable_data(), s.im.data(), sizeof(double) * s.im.size());
        return py::make_tuple(re, im);
      },
      py::arg("signal"), py::arg("fft_size") = 512, py::arg("hop") = 256);

  m.def(
      "sm_loss",
      [](const Array& d, const Array& d_hat, int fft_size, int hop) {
        return sm_loss(waveform_from_array(d), waveform_from_array(d_hat), {fft_size, hop});
      },
      py::arg("target"), py::arg("estimate"), py::arg("fft_size") = 512, py::arg("hop") = 256);

  m.def(
      "pcm_loss",
      [](const Array& x, const Array& d, const Array& d_hat, int fft_size, int hop) {
        const LossReport r = pcm_loss(waveform_from_array(x), waveform_from_array(d),
                                      waveform_from_array(d_hat), {fft_size, hop});
        return py::dict(py::arg("total") = r.total, py::arg("speech_term") = r.speech_term,
                        py::arg("interference_term") = r.interference_term);
      },
      py::arg("mixture"), py::arg("target"), py::arg("estimate"), py::arg("fft_size") = 512,
      py::arg("hop") = 256);

  m.def(
      "mse_loss",
      [](const Array& d, const Array& d_hat) {
        return mse_loss(waveform_from_array(d), waveform_from_array(d_hat));
      },
      py::arg("target"), py::arg("estimate"));

  m.def(
      "si_sdr",
      [](const Array& estimate, const Array& reference) {
        std::vector<double> e(estimate.data(), estimate.data() + estimate.size());
        std::vector<double> r(reference.data(), reference.data() + reference.size());
        return si_sdr(e, r);
      },
      py::arg("estimate"), py::arg("reference"));

  m.def(
      "image_source_rir",
      [](const std::array<double, 3>& room, const std::array<double, 3>& src,
         const std::array<double, 3>& mic, int max_order, double beta, int fs, long rir_len) {
        const Rir rir = image_source_rir(to_point(room), to_point(src), to_point(mic), max_order, beta,
                                         fs, rir_len);
        Array taps(static_cast<py::ssize_t>(rir.taps.size()));
        std::memcpy(taps.mutable_data(), rir.taps.data(), sizeof(double) * rir.taps.size());
        return py::make_tuple(taps, rir.dropped_images);
      },
      py::arg("room"), py::arg("source"), py::arg("mic"), py::arg("max_order"), py::arg("beta"),
      py::arg("fs") = 16000, py::arg("rir_len") = 4096);

  m.def(
      "t60_to_beta",
      [](double t60, const std::array<double, 3>& room) { return t60_to_beta(t60, to_point(room)); },
      py::arg("t60"), py::arg("room"));

  m.def(
      "make_mixture",
      [](const Array& speech, std::uint64_t seed, int num_mics, int max_order, double snr_min,
         double snr_max, double t60_min, double t60_max) {
        Rng rng(seed);
        SceneConstraints cs;
        cs.num_mics = num_mics;
        cs.snr_min = snr_min;
        cs.snr_max = snr_max;
        cs.t60_min = t60_min;
        cs.t60_max = t60_max;
        const RoomScene scene = sample_scene(rng, cs);
        const Waveform sp = waveform_from_array(speech);
        std::vector<Waveform> noises;
        for (std::size_t j = 0; j < scene.noise_positions.size(); ++j) {
          Waveform n(1, sp.num_samples);
          for (auto& v : n.samples) v = rng.uniform(-0.3, 0.3);
          noises.push_back(std::move(n));
        }
        const MixtureExample ex = propagate_and_mix(scene, sp, noises, max_order, 16000);
        return py::dict(py::arg("mixture") = array_from_waveform(ex.x),
                        py::arg("target") = array_from_waveform(ex.d),
                        py::arg("interference") = array_from_waveform(ex.u),
                        py::arg("snr_db") = scene.snr, py::arg("t60") = scene.t60,
                        py::arg("noise_gain") = ex.noise_gain);
      },
      py::arg("speech"), py::arg("seed") = 0, py::arg("num_mics") = 4, py::arg("max_order") = 3,
      py::arg("snr_min") = -10.0, py::arg("snr_max") = 10.0, py::arg("t60_min") = 0.2,
      py::arg("t60_max") = 1.2,
      "Sample a random scene, spatialize the mono speech with synthetic noise sources, and return "
      "the mixture, direct-path target and interference.");
}
