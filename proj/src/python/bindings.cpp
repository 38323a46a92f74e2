#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cclip/alignment.hpp"
#include "cclip/cli.hpp"
#include "cclip/dataset.hpp"
#include "cclip/inference.hpp"
#include "cclip/numcore.hpp"
#include "cclip/synthetic.hpp"

namespace py = pybind11;

namespace {

using cclip::Matrix;

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) {
        throw py::value_error("expected a 2-D array");
    }
    Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::copy(arr.data(), arr.data() + m.size(), m.data.begin());
    return m;
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> arr({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), arr.mutable_data());
    return arr;
}

std::vector<std::size_t> to_targets(const std::vector<std::size_t>& t) { return t; }

// AlignmentModel plus the handful of operations the python side needs.
struct PyModel {
    cclip::AlignmentModel model;

    static PyModel init(std::size_t d_in, std::size_t hidden, std::size_t d_v, std::size_t d_t,
                        std::size_t joint, const std::vector<std::string>& vocab_tokens,
                        std::uint64_t seed, const std::string& image_mode,
                        const std::string& text_mode) {
        cclip::Vocab vocab = cclip::Vocab::from_tokens(vocab_tokens);
        cclip::ModelDims dims{d_in, hidden, d_v, d_t, joint, vocab.size()};
        return {cclip::AlignmentModel::init(dims, std::move(vocab), seed,
                                            cclip::encoder_mode_from_name(image_mode),
                                            cclip::encoder_mode_from_name(text_mode))};
    }

    static PyModel load(const std::string& path) { return {cclip::load_checkpoint(path)}; }

    void save(const std::string& path) const { cclip::save_checkpoint(model, path); }

    py::array_t<double> embed_images(
        const py::array_t<double, py::array::c_style | py::array::forcecast>& inputs) const {
        return to_array(cclip::embed_images(model, to_matrix(inputs)));
    }

    py::array_t<double> embed_texts(const std::vector<std::string>& texts) const {
        return to_array(cclip::embed_texts(model, texts));
    }

    py::array_t<double> zero_shot(
        const py::array_t<double, py::array::c_style | py::array::forcecast>& image_input,
        const std::vector<std::string>& classes, const std::string& template_text,
        const std::string& rule) const {
        std::vector<double> row;
        if (image_input.ndim() == 1) {
            row.assign(image_input.data(), image_input.data() + image_input.shape(0));
        } else {
            const Matrix m = to_matrix(image_input);
            if (m.rows != 1) {
                throw py::value_error("zero_shot expects a single feature row");
            }
            row = m.data;
        }
        const auto prompts = cclip::PromptSet::make(classes, template_text);
        const auto probs = cclip::zero_shot_predict(
            model, row, prompts,
            rule == "literal" ? cclip::ProbabilityRule::literal
                              : cclip::ProbabilityRule::softmax);
        py::array_t<double> out({probs.size()});
        std::copy(probs.begin(), probs.end(), out.mutable_data());
        return out;
    }

    double logit_scale() const { return model.logit_scale(); }

    py::dict dims() const {
        const cclip::ModelDims d = model.dims();
        py::dict out;
        out["d_in"] = d.d_in;
        out["hidden"] = d.hidden;
        out["d_v"] = d.d_v;
        out["d_t"] = d.d_t;
        out["joint"] = d.joint;
        out["vocab"] = d.vocab;
        return out;
    }
};

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "dual-encoder contrastive alignment engine (C++ core)";

    py::register_exception<cclip::Error>(m, "EngineError");

    m.def("l2_normalize_rows",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              return to_array(cclip::l2_normalize_rows(to_matrix(a)));
          });
    m.def("softmax_rows",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
              return to_array(cclip::softmax_rows(to_matrix(a)));
          });
    m.def("cross_entropy_rows",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
             const std::vector<std::size_t>& targets) {
              return cclip::cross_entropy_rows(to_matrix(logits), to_targets(targets));
          });
    m.def("similarity_logits",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& fv,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& ft,
             double tau) {
              return to_array(cclip::similarity_logits(to_matrix(fv), to_matrix(ft), tau));
          },
          py::arg("fv_norm"), py::arg("ft_norm"), py::arg("tau"));
    m.def("symmetric_loss",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
              return cclip::symmetric_loss(to_matrix(logits));
          });

    m.def("read_fvecs",
          [](const std::string& path) { return to_array(cclip::read_fvecs(path)); });
    m.def("write_fvecs",
          [](const std::string& path,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& vectors) {
              cclip::write_fvecs(path, to_matrix(vectors));
          });

    m.def("build_vocab",
          [](const std::vector<std::string>& captions, std::size_t max_size) {
              return cclip::Vocab::build(captions, max_size).tokens();
          },
          py::arg("captions"), py::arg("max_size") = cclip::Vocab::kDefaultMaxSize);
    m.def("tokenize", [](const std::string& caption, const std::vector<std::string>& tokens) {
        return cclip::tokenize(caption, cclip::Vocab::from_tokens(tokens));
    });

    m.def("retrieve_topk",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& query,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& index,
             const std::vector<std::string>& ids, std::size_t k) {
              cclip::RetrievalIndex idx;
              idx.embeddings = to_matrix(index);
              idx.ids = ids;
              std::vector<std::pair<std::string, double>> out;
              for (const auto& hit : cclip::retrieve(to_matrix(query), idx, k)) {
                  out.emplace_back(hit.id, hit.cosine);
              }
              return out;
          },
          py::arg("query"), py::arg("index"), py::arg("ids"), py::arg("k"));
    m.def("avg_topk_cosine",
          [](const py::array_t<double, py::array::c_style | py::array::forcecast>& queries,
             const py::array_t<double, py::array::c_style | py::array::forcecast>& index,
             const std::vector<std::string>& ids, std::size_t k) {
              cclip::RetrievalIndex idx;
              idx.embeddings = to_matrix(index);
              idx.ids = ids;
              return cclip::avg_topk_cosine(to_matrix(queries), {}, idx, k, false);
          },
          py::arg("queries"), py::arg("index"), py::arg("ids"), py::arg("k"));

    m.def("make_synthetic_dataset",
          [](const std::string& out_dir, std::size_t samples_per_class, std::size_t dim,
             double sigma, std::uint64_t seed) {
              cclip::SyntheticSpec spec;
              spec.samples_per_class = samples_per_class;
              spec.feature_dim = dim;
              spec.noise_sigma = sigma;
              spec.seed = seed;
              const auto data = cclip::make_synthetic(spec);
              return cclip::write_synthetic(data, out_dir).string();
          },
          py::arg("out_dir"), py::arg("samples_per_class") = 25, py::arg("dim") = 16,
          py::arg("sigma") = 0.3, py::arg("seed") = 0);

    m.def("run_cli", &cclip::run_cli, py::arg("args"),
          "invoke the command-line surface; returns the exit code");

    m.def("default_config_json", [] { return cclip::RunConfig::defaults().to_json_text(); });

    py::class_<PyModel>(m, "Model")
        .def_static("init", &PyModel::init, py::arg("d_in"), py::arg("hidden"), py::arg("d_v"),
                    py::arg("d_t"), py::arg("joint"), py::arg("vocab_tokens"),
                    py::arg("seed") = 0, py::arg("image_mode") = "toy",
                    py::arg("text_mode") = "toy")
        .def_static("load", &PyModel::load, py::arg("path"))
        .def("save", &PyModel::save, py::arg("path"))
        .def("embed_images", &PyModel::embed_images, py::arg("inputs"))
        .def("embed_texts", &PyModel::embed_texts, py::arg("texts"))
        .def("zero_shot", &PyModel::zero_shot, py::arg("image_input"), py::arg("classes"),
             py::arg("template_text") = cclip::kDefaultPromptTemplate,
             py::arg("rule") = "softmax")
        .def_property_readonly("logit_scale", &PyModel::logit_scale)
        .def_property_readonly("dims", &PyModel::dims);

    m.attr("__version__") = "0.1.0";
    m.attr("MAX_TOKENS") = cclip::kMaxTokens;
}
