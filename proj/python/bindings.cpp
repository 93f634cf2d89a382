// Python bindings: thin wrappers over the C++ engine. Tensors cross the
// boundary as float32 numpy arrays (copied).

#include "ctxmix/ablation.hpp"
#include "ctxmix/alignment.hpp"
#include "ctxmix/cue.hpp"
#include "ctxmix/dataset.hpp"
#include "ctxmix/error.hpp"
#include "ctxmix/mixing.hpp"
#include "ctxmix/probing.hpp"
#include "ctxmix/report.hpp"
#include "ctxmix/synth.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ctxmix;

namespace {

py::array_t<float> to_numpy(const Tensor& t)
{
    py::array_t<float> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

Tensor from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a)
{
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

template <class T, class F>
std::vector<T> parse_all(const std::vector<std::string>& names, F parse)
{
    std::vector<T> out;
    for (const auto& n : names) out.push_back(parse(n));
    return out;
}

py::dict map_dict(const MixingMap& m)
{
    py::dict d;
    d["layer"] = m.layer + 1;
    d["method"] = to_string(m.method);
    d["scope"] = to_string(m.scope);
    d["scores"] = to_numpy(m.scores);
    d["row_words"] = m.row_labels;
    d["col_words"] = m.col_labels;
    d["flagged"] = m.flagged;
    d["normalized"] = m.normalized;
    if (m.raw_cosine) d["raw_cosine"] = to_numpy(*m.raw_cosine);
    return d;
}

const Utterance& find_utterance(const std::vector<Utterance>& data, const std::string& id)
{
    for (const auto& u : data) {
        if (u.manifest.id == id) return u;
    }
    fail(ErrorKind::Input, "no utterance with id '" + id + "'");
}

} // namespace

PYBIND11_MODULE(_ctxmix, m)
{
    m.doc() = "Context-mixing analysis engine for speech transformers";

    // what() already carries the kind prefix ("input: ...").
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    py::class_<ModelSpec>(m, "ModelSpec")
        .def_property_readonly("kind", [](const ModelSpec& s) { return std::string(to_string(s.kind)); })
        .def_readonly("encoder_layers", &ModelSpec::encoder_layers)
        .def_readonly("decoder_layers", &ModelSpec::decoder_layers)
        .def_readonly("d_model", &ModelSpec::d_model)
        .def_readonly("n_heads", &ModelSpec::n_heads)
        .def_readonly("vocab_size", &ModelSpec::vocab_size);

    py::class_<Model>(m, "Model")
        .def_readonly("spec", &Model::spec)
        .def_property_readonly("vocab", [](const Model& mdl) { return mdl.vocab.tokens(); })
        .def("save", [](const Model& mdl, const std::filesystem::path& dir) { save_model(dir, mdl); });

    py::class_<Utterance>(m, "Utterance")
        .def_property_readonly("id", [](const Utterance& u) { return u.manifest.id; })
        .def_property_readonly("words", [](const Utterance& u) {
            std::vector<std::string> w;
            for (const auto& t : u.manifest.words) w.push_back(t.text);
            return w;
        })
        .def_property_readonly("cue_idx", [](const Utterance& u) { return u.manifest.cue_idx; })
        .def_property_readonly("target_idx", [](const Utterance& u) { return u.manifest.target_idx; })
        .def_property_readonly("label", [](const Utterance& u) { return std::string(to_string(u.manifest.label)); })
        .def_property_readonly("frames", [](const Utterance& u) { return to_numpy(u.frames); });

    m.def("load_model", [](const std::filesystem::path& dir) { return load_model(dir); }, py::arg("path"));
    m.def("load_dataset", [](const std::filesystem::path& manifest, const Model& mdl) {
        return load_dataset(manifest, mdl.spec);
    }, py::arg("manifest"), py::arg("model"));

    m.def("synth", [](const std::filesystem::path& out, std::uint64_t seed, std::size_t size) {
        SynthTaskSpec spec;
        spec.seed = seed;
        spec.dataset_size = size;
        const auto data = gen_dataset(spec);
        const auto enc = build_cue_copy_encoder(spec);
        const auto encdec = build_cue_copy_encdec(spec);
        write_task(out / "encoder-ctc", enc.model, data);
        write_task(out / "encoder-decoder", encdec.model, data);
        py::dict d;
        d["utterances"] = data.size();
        d["encoder_copy_layer"] = enc.copy_layer + 1;
        d["decoder_copy_layer"] = encdec.copy_layer + 1;
        return d;
    }, py::arg("out"), py::arg("seed") = 13, py::arg("size") = 200,
       "Write the toy encoder-ctc and encoder-decoder tasks under out/.");

    m.def("time_to_frame", [](double t, double duration, std::size_t frames) {
        return time_to_frame(t, {duration, frames, false});
    }, py::arg("t"), py::arg("duration"), py::arg("frames"));

    m.def("encoder_forward", [](const Model& mdl, py::array_t<float> frames) {
        const auto cap = encoder_forward(mdl, from_numpy(frames));
        py::list layers;
        for (const auto& l : cap.layers) layers.append(to_numpy(l.output));
        py::dict d;
        d["layers"] = layers;
        d["output"] = to_numpy(cap.output);
        d["logits"] = to_numpy(cap.logits);
        return d;
    }, py::arg("model"), py::arg("frames"));

    m.def("transcribe", [](const Model& mdl, const Utterance& u) {
        return transcribed_words(mdl, run_utterance(mdl, u.frames, u.manifest));
    }, py::arg("model"), py::arg("utterance"));

    m.def("scores", [](const Model& mdl, const Utterance& u, const std::vector<std::string>& methods,
                       const std::vector<std::string>& scopes, bool normalize) {
        ScoreRequest req;
        req.methods = parse_all<Method>(methods, parse_method);
        req.scopes = parse_all<Scope>(scopes, parse_scope);
        req.normalize = normalize;
        const auto maps = score_all(run_utterance(mdl, u.frames, u.manifest), req);
        py::list out;
        for (const auto& mp : maps) out.append(map_dict(mp));
        return out;
    }, py::arg("model"), py::arg("utterance"), py::arg("methods") = std::vector<std::string>{"attn", "an", "vz"},
       py::arg("scopes") = std::vector<std::string>{"within-encoder"}, py::arg("normalize") = true,
       "Word-level maps for every layer, ordered layer-major, then method, then scope.");

    m.def("cue_profile", [](const Model& mdl, const std::vector<Utterance>& data,
                            const std::vector<std::string>& methods, const std::vector<std::string>& scopes,
                            const std::vector<std::uint64_t>& seeds) {
        ProfileOptions opt;
        opt.methods = parse_all<Method>(methods, parse_method);
        opt.scopes = parse_all<Scope>(scopes, parse_scope);
        const auto cmp = compare_trained_random(mdl, data, opt, seeds);
        py::list rows;
        for (const auto* p : [&] {
                 std::vector<const CueContributionProfile*> all{&cmp.trained};
                 for (const auto& r : cmp.random) all.push_back(&r);
                 return all;
             }()) {
            for (const auto& e : p->entries) {
                py::dict d;
                d["model"] = p->model_tag;
                d["layer"] = e.layer + 1;
                d["method"] = to_string(e.method);
                d["scope"] = to_string(e.scope);
                d["mean"] = e.mean;
                d["std"] = e.stddev;
                d["count"] = e.count;
                rows.append(d);
            }
        }
        return rows;
    }, py::arg("model"), py::arg("data"), py::arg("methods") = std::vector<std::string>{"attn", "an", "vz"},
       py::arg("scopes") = std::vector<std::string>{"within-encoder"},
       py::arg("seeds") = std::vector<std::uint64_t>{13, 14, 15});

    m.def("probe", [](const Model& mdl, const std::vector<Utterance>& data, const std::string& scope,
                      std::size_t k, double lambda, std::uint64_t seed) {
        const Scope s = parse_scope(scope);
        check(s != Scope::Cross, ErrorKind::Usage, "probe scope must be within-encoder or within-decoder");
        const auto ds = build_probe_dataset(mdl, data, s == Scope::WithinEncoder ? ProbeSide::Encoder : ProbeSide::Decoder);
        std::vector<double> acc;
        for (const auto& l : kfold_probe(ds, k, lambda, seed).levels) acc.push_back(l.mean_accuracy);
        return acc;
    }, py::arg("model"), py::arg("data"), py::arg("scope") = "within-encoder", py::arg("k_folds") = 3,
       py::arg("lam") = 1.0, py::arg("seed") = kFoldSeed,
       "Mean k-fold accuracy per level (0 = input).");

    m.def("ablate", [](const Model& mdl, const std::vector<Utterance>& data, const std::vector<std::string>& names) {
        const auto conds = parse_all<AblationCondition>(names, parse_condition);
        const auto report = run_ablation(mdl, data, conds);
        py::dict d;
        for (const auto& s : report.summary) d[to_string(s.condition)] = s.mean_drop;
        return d;
    }, py::arg("model"), py::arg("data"), py::arg("conditions"), "Mean confidence drop per condition.");

    m.def("render_heatmap", [](const std::filesystem::path& scores_jsonl, std::size_t index) {
        const auto records = read_scores_jsonl(scores_jsonl);
        check(index < records.size(), ErrorKind::Range, "map index out of range");
        return render_heatmap_svg(records[index]);
    }, py::arg("scores_jsonl"), py::arg("index") = 0);

    m.def("utterance", &find_utterance, py::arg("data"), py::arg("id"), py::return_value_policy::copy);
}
