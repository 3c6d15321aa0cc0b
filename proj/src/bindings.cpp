#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "esres/dsp.hpp"
#include "esres/folds.hpp"
#include "esres/model.hpp"
#include "esres/synth.hpp"
#include "esres/training.hpp"
#include "esres/weights.hpp"

namespace py = pybind11;
using namespace esres;

namespace {

audio::AudioClip clip_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> a,
                                 int sample_rate) {
  if (a.ndim() != 1 && a.ndim() != 2)
    throw ShapeError("audio array must be 1-D (mono) or 2-D (channels, samples)");
  const int channels = a.ndim() == 2 ? static_cast<int>(a.shape(0)) : 1;
  const int64_t length = a.ndim() == 2 ? a.shape(1) : a.shape(0);
  auto clip = audio::AudioClip::make(channels, length, sample_rate);
  std::memcpy(clip.samples.data(), a.data(), sizeof(float) * clip.samples.size());
  return clip;
}

py::array_t<float> array_from_clip(const audio::AudioClip& clip) {
  py::array_t<float> out({static_cast<py::ssize_t>(clip.channels),
                          static_cast<py::ssize_t>(clip.length)});
  std::memcpy(out.mutable_data(), clip.samples.data(), sizeof(float) * clip.samples.size());
  return out;
}

py::array_t<float> array_from_spec(const dsp::Spectrogram& s) {
  py::array_t<float> out({static_cast<py::ssize_t>(s.bands), static_cast<py::ssize_t>(s.bins),
                          static_cast<py::ssize_t>(s.frames)});
  std::memcpy(out.mutable_data(), s.values.data(), sizeof(float) * s.values.size());
  return out;
}

nn::Tensor<float> tensor_from_array(
    py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  nn::Shape shape;
  for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
  std::vector<float> data(a.data(), a.data() + a.size());
  return nn::Tensor<float>::from(shape, std::move(data));
}

py::array_t<float> array_from_tensor(const nn::Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::memcpy(out.mutable_data(), t.value().data(), sizeof(float) * t.value().size());
  return out;
}

class PyModel {
 public:
  PyModel(int num_classes, int in_channels, bool attention, double width_scale,
          int num_stages, double input_div, uint64_t seed)
      : model_(make_config(num_classes, in_channels, attention, width_scale, num_stages,
                           input_div),
               seed) {}

  static nn::ModelConfig make_config(int num_classes, int in_channels, bool attention,
                                     double width_scale, int num_stages, double input_div) {
    nn::ModelConfig mc;
    mc.num_classes = num_classes;
    mc.in_channels = in_channels;
    mc.attention = attention;
    mc.width_scale = width_scale;
    mc.num_stages = num_stages;
    mc.input_div = input_div;
    return mc;
  }

  py::array_t<float> forward(py::array_t<float, py::array::c_style | py::array::forcecast> x) {
    return array_from_tensor(model_.forward(tensor_from_array(std::move(x)), false));
  }

  py::array_t<float> forward_stereo(
      py::array_t<float, py::array::c_style | py::array::forcecast> left,
      py::array_t<float, py::array::c_style | py::array::forcecast> right) {
    return array_from_tensor(model_.forward_stereo(tensor_from_array(std::move(left)),
                                                   tensor_from_array(std::move(right)), false));
  }

  py::array_t<float> embed(py::array_t<float, py::array::c_style | py::array::forcecast> x) {
    return array_from_tensor(model_.embed(tensor_from_array(std::move(x)), false));
  }

  int64_t parameter_count() const { return model_.parameter_count(); }
  int embedding_dim() const { return model_.embedding_dim(); }

  std::vector<std::string> parameter_names() {
    std::vector<std::string> names;
    for (auto& [name, p] : model_.named_parameters()) names.push_back(name);
    return names;
  }

  void save(const std::string& path) { nn::save_weights(nn::snapshot(model_), path); }
  void load(const std::string& path) { nn::restore(model_, nn::load_weights(path)); }

 private:
  nn::EsResNet<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Environmental sound classification core";

  py::register_exception<Error>(m, "EsresError");

  py::class_<dsp::FrontEndConfig>(m, "FrontEndConfig")
      .def(py::init<>())
      .def_static("from_window", &dsp::FrontEndConfig::from_window, py::arg("frame_ms"),
                  py::arg("overlap"), py::arg("sample_rate") = 44100, py::arg("fft_size") = 0,
                  py::arg("bands") = 3, py::arg("epsilon_power") = 1e-12)
      .def_readwrite("sample_rate", &dsp::FrontEndConfig::sample_rate)
      .def_readwrite("frame_len", &dsp::FrontEndConfig::frame_len)
      .def_readwrite("hop", &dsp::FrontEndConfig::hop)
      .def_readwrite("fft_size", &dsp::FrontEndConfig::fft_size)
      .def_readwrite("bands", &dsp::FrontEndConfig::bands)
      .def("spectrum_bins", &dsp::FrontEndConfig::spectrum_bins)
      .def("band_rows", &dsp::FrontEndConfig::band_rows)
      .def("frame_count", &dsp::FrontEndConfig::frame_count);

  m.def("blackman_harris_window", [](int n) {
    const auto w = dsp::blackman_harris_window(n);
    py::array_t<double> out(static_cast<py::ssize_t>(w.size()));
    std::memcpy(out.mutable_data(), w.data(), sizeof(double) * w.size());
    return out;
  });

  m.def(
      "extract_features",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> samples,
         const dsp::FrontEndConfig& cfg) {
        const auto clip = clip_from_array(std::move(samples), cfg.sample_rate);
        std::vector<py::array_t<float>> out;
        for (const auto& s : dsp::extract_features(clip, cfg)) out.push_back(array_from_spec(s));
        return out;
      },
      py::arg("samples"), py::arg("config"),
      "Per-channel banded log-power spectrograms, each (bands, bins, frames)");

  m.def(
      "decode_wav",
      [](const std::string& path) {
        const auto clip = audio::decode_wav_file(path);
        return py::make_tuple(array_from_clip(clip), clip.sample_rate);
      },
      py::arg("path"));

  m.def(
      "resample",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> samples, int rate,
         int target_rate) {
        return array_from_clip(audio::resample(clip_from_array(std::move(samples), rate),
                                               target_rate));
      },
      py::arg("samples"), py::arg("rate"), py::arg("target_rate"));

  m.def(
      "lr_schedule",
      [](int epoch, int epochs, double base_lr, double gamma) {
        train::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.base_lr = base_lr;
        cfg.gamma = gamma;
        return train::lr_schedule(epoch, cfg);
      },
      py::arg("epoch"), py::arg("epochs") = 300, py::arg("base_lr") = 2.5e-4,
      py::arg("gamma") = 0.985);

  py::class_<PyModel>(m, "Model")
      .def(py::init<int, int, bool, double, int, double, uint64_t>(),
           py::arg("num_classes") = 50, py::arg("in_channels") = 3,
           py::arg("attention") = false, py::arg("width_scale") = 1.0,
           py::arg("num_stages") = 4, py::arg("input_div") = 100.0, py::arg("seed") = 0)
      .def("forward", &PyModel::forward, py::arg("x"))
      .def("forward_stereo", &PyModel::forward_stereo, py::arg("left"), py::arg("right"))
      .def("embed", &PyModel::embed, py::arg("x"))
      .def("parameter_count", &PyModel::parameter_count)
      .def("embedding_dim", &PyModel::embedding_dim)
      .def("parameter_names", &PyModel::parameter_names)
      .def("save", &PyModel::save, py::arg("path"))
      .def("load", &PyModel::load, py::arg("path"));

  py::class_<data::ManifestEntry>(m, "ManifestEntry")
      .def(py::init<>())
      .def_readwrite("clip_path", &data::ManifestEntry::clip_path)
      .def_readwrite("class_label", &data::ManifestEntry::class_label)
      .def_readwrite("fold_id", &data::ManifestEntry::fold_id)
      .def_readwrite("source_id", &data::ManifestEntry::source_id)
      .def_readwrite("snippet_index", &data::ManifestEntry::snippet_index);

  m.def("parse_manifest", &data::parse_manifest, py::arg("path"), py::arg("fold_count") = 0);

  m.def(
      "audit",
      [](const std::vector<data::ManifestEntry>& entries, const std::string& mode, int k,
         uint64_t seed) {
        const auto split = mode == "official" ? data::official_folds(entries, k)
                                              : data::stratified_kfold(entries, k, seed);
        const auto report = data::audit_split(entries, split);
        return py::make_tuple(report.total_leaked, data::report_json(report, entries));
      },
      py::arg("entries"), py::arg("mode") = "official", py::arg("k") = 10, py::arg("seed") = 0,
      "Returns (leaked_source_count, json_report)");

  m.def(
      "synth_dataset",
      [](const std::string& out_dir, int sources, int snippets, int classes, int folds,
         int snippet_len, int sample_rate, uint64_t seed) {
        data::SynthConfig cfg;
        cfg.num_sources = sources;
        cfg.snippets_per_source = snippets;
        cfg.num_classes = classes;
        cfg.num_folds = folds;
        cfg.snippet_len = snippet_len;
        cfg.sample_rate = sample_rate;
        cfg.seed = seed;
        auto ds = data::synth_overlapped_manifest(cfg);
        data::write_dataset(ds, out_dir);
        return static_cast<int>(ds.entries.size());
      },
      py::arg("out_dir"), py::arg("sources") = 10, py::arg("snippets") = 4,
      py::arg("classes") = 2, py::arg("folds") = 10, py::arg("snippet_len") = 22050,
      py::arg("sample_rate") = 44100, py::arg("seed") = 0);
}
