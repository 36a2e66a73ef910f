#include "codeccap/aggregate.hpp"
#include "codeccap/caption_model.hpp"
#include "codeccap/cli.hpp"
#include "codeccap/codec_probe.hpp"
#include "codeccap/error.hpp"
#include "codeccap/forge.hpp"
#include "codeccap/vidcapqa.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace codeccap;

namespace {

py::dict segment_dict(const Segment& s) {
    py::dict d;
    d["index"] = s.index;
    d["start_s"] = s.start_s;
    d["end_s"] = s.end_s;
    d["start_kind"] = std::string(to_string(s.start_kind));
    d["end_kind"] = std::string(to_string(s.end_kind));
    return d;
}

} // namespace

PYBIND11_MODULE(_codeccap, m) {
    m.doc() = "Codec-aligned video captioning core";

    auto& error = py::register_exception<Error>(m, "Error");
    py::register_exception<InputError>(m, "InputError", error.ptr());
    py::register_exception<BackendError>(m, "BackendError", error.ptr());
    py::register_exception<StateError>(m, "StateError", error.ptr());

    m.def("gap_cv", [](std::vector<double> iframes) {
        IFrameTimeline t;
        t.timestamps = std::move(iframes);
        return gap_statistics(t).cv;
    }, py::arg("iframes"), "Coefficient of variation of the I-frame gaps.");

    m.def("select_mode", [](std::vector<double> iframes, double tau_gop) {
        IFrameTimeline t;
        t.timestamps = std::move(iframes);
        SegmentationConfig cfg;
        cfg.tau_gop = tau_gop;
        return std::string(to_string(select_mode(gap_statistics(t), cfg)));
    }, py::arg("iframes"), py::arg("tau_gop") = 0.5);

    m.def("plan_segments",
          [](const std::string& video_id, double duration_s, std::vector<double> iframes, std::vector<double> cuts,
             double tau_gop, double proximity_s, double max_segment_s, double min_segment_s) {
              VideoRef v;
              v.video_id = video_id;
              v.duration_s = duration_s;
              IFrameTimeline t;
              t.timestamps = std::move(iframes);
              CutList c;
              c.cut_times = std::move(cuts);
              SegmentationConfig cfg{tau_gop, proximity_s, max_segment_s, min_segment_s};
              cfg.validate();
              py::list out;
              for (const auto& s : plan_segments(v, t, c, cfg)) out.append(segment_dict(s));
              return out;
          },
          py::arg("video_id"), py::arg("duration_s"), py::arg("iframes"), py::arg("cuts") = std::vector<double>{},
          py::arg("tau_gop") = 0.5, py::arg("proximity_s") = 0.5, py::arg("max_segment_s") = 60.0,
          py::arg("min_segment_s") = 1.0);

    m.def("validate_document", [](const std::string& json) { validate(deserialize_document(json)); },
          py::arg("document_json"));

    m.def("aggregate_document", [](const std::string& json, const std::string& mode) {
        AggregateOptions o;
        o.mode = synthesis_mode_from_string(mode);
        if (o.mode != SynthesisMode::template_mode) throw InputError("only template mode runs without a backend");
        return serialize_document(aggregate_document(deserialize_document(json), o).document);
    }, py::arg("document_json"), py::arg("mode") = "template");

    m.def("compute_stats", [](const std::vector<std::string>& docs) {
        std::vector<CaptionDocument> parsed;
        for (const auto& d : docs) parsed.push_back(deserialize_document(d));
        return serialize_stats(compute_stats(parsed));
    }, py::arg("documents"), "Corpus statistics as JSON.");

    m.def("redundancy_report", [](const std::string& doc, const std::string& baseline) {
        return serialize_redundancy(redundancy_report(deserialize_document(doc), parse_baseline(baseline)));
    }, py::arg("document_json"), py::arg("baseline_json"));

    m.def("capability_names", &capability_names);
    m.def("relabel_capability", &relabel_capability, py::arg("votes"), py::arg("strict_unknown") = true);
    m.def("phase_a_classify", [](int gt, const std::vector<int>& answers) {
        return std::string(to_string(phase_a_classify(gt, answers)));
    }, py::arg("ground_truth"), py::arg("answers"));
    m.def("phase_b_classify", [](const std::vector<bool>& c) { return std::string(to_string(phase_b_classify(c))); },
          py::arg("confirmations"));
    m.def("allocate_budget", &allocate_budget, py::arg("available"), py::arg("budget"));
    m.def("largest_remainder", [](std::size_t quota) { return largest_remainder(quota); }, py::arg("quota"));

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"codeccap"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int rc;
        {
            py::gil_scoped_release release;
            rc = dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(rc, out.str(), err.str());
    }, py::arg("args"), "Runs one CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
