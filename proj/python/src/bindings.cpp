#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "spslu/cli.hpp"
#include "spslu/corpus.hpp"
#include "spslu/errors.hpp"
#include "spslu/gradcheck_suite.hpp"
#include "spslu/metrics.hpp"
#include "spslu/model.hpp"
#include "spslu/serialize.hpp"
#include "spslu/trainer.hpp"

namespace py = pybind11;
using namespace spslu;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::handle& obj) {
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return nlohmann::json::parse(text);
}

std::vector<std::string> tokenize(const py::object& text) {
  if (py::isinstance<py::str>(text)) {
    std::istringstream is(text.cast<std::string>());
    std::vector<std::string> words;
    for (std::string w; is >> w;) words.push_back(w);
    return words;
  }
  return text.cast<std::vector<std::string>>();
}

}  // namespace

PYBIND11_MODULE(_spslu, m) {
  m.doc() = "Stack-propagation joint intent detection and slot filling";
  m.attr("__version__") = "1.0.0";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("variants", &variant_names, "Names accepted as model variants.");

  py::class_<TrainedModel>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); },
                  py::arg("path"))
      .def("save", [](const TrainedModel& self, const std::filesystem::path& p) {
        save_model(self, p);
      }, py::arg("path"))
      .def_property_readonly("config", [](const TrainedModel& self) {
        return to_py(self.config.to_json());
      })
      .def_property_readonly("intents", [](const TrainedModel& self) {
        return self.vocabs.intents.tokens();
      })
      .def_property_readonly("slot_tags", [](const TrainedModel& self) {
        return self.vocabs.slot_tags.tokens();
      })
      .def("to_bytes", [](const TrainedModel& self) {
        return py::bytes(serialize_model(self));
      })
      .def_static("from_bytes", [](const py::bytes& b) {
        return deserialize_model(std::string(b));
      })
      .def("predict", [](const TrainedModel& self, const py::object& text,
                         std::optional<std::string> intent) {
        const auto tokens = tokenize(text);
        TrainedModel::Detail d;
        {
          py::gil_scoped_release release;
          d = self.predict(tokens, intent);
        }
        py::dict out;
        out["intent"] = self.config.scores_intent() ? py::cast(d.prediction.intent)
                                                    : py::none();
        out["slots"] = py::cast(d.prediction.slots);
        out["token_intents"] = py::cast(d.token_intents);
        return out;
      }, py::arg("text"), py::arg("intent") = py::none(),
         "Tag one utterance given as a string or a token list.")
      .def("evaluate", [](const TrainedModel& self, const std::filesystem::path& dir) {
        EvalReport r;
        {
          py::gil_scoped_release release;
          r = self.evaluate(load_split(dir));
        }
        return to_py(r.to_json());
      }, py::arg("split_dir"), "Score the seq.in/seq.out/label split in `split_dir`.");

  m.def("train", [](const std::filesystem::path& data, const py::dict& overrides) {
    nlohmann::json j = from_py(overrides);
    j["data"] = data.string();
    if (!j.contains("out")) j["out"] = ".";
    RunConfig rc = RunConfig::overlay(RunConfig{}, j);
    rc.validate();
    Corpus corpus = load_dataset(rc.data_dir);
    if (rc.train_limit > 0 && corpus.train.size() > rc.train_limit) {
      corpus.train.resize(rc.train_limit);
    }
    const auto vocabs = build_vocab(corpus.train);
    std::optional<TrainResult> result;
    {
      py::gil_scoped_release release;
      result.emplace(spslu::train(rc.model, rc.train, corpus, vocabs));
    }
    py::list log;
    for (const auto& rec : result->log) log.append(to_py(rec.to_json()));
    return py::make_tuple(std::move(result->model), log);
  }, py::arg("data_dir"), py::arg("config") = py::dict(),
     "Train on data_dir/{train,dev}; `config` uses the CLI flag names as keys.\n"
     "Returns (model, epoch_log).");

  m.def("gradcheck", [](const std::string& size, double epsilon) {
    GradCheckOptions opts;
    opts.epsilon = epsilon;
    GradCheckResult r;
    {
      py::gil_scoped_release release;
      if (size == "small") r = gradcheck_small(opts);
      else if (size == "full") r = gradcheck_full(opts);
      else throw ConfigError("size must be 'small' or 'full'");
    }
    py::dict out;
    out["max_relative_error"] = r.max_relative_error;
    out["worst_param"] = r.worst_param;
    out["coordinates_checked"] = r.coordinates_checked;
    return out;
  }, py::arg("size") = "small", py::arg("epsilon") = kGradCheckEpsilon);

  m.def("extract_chunks", [](const std::vector<std::string>& tags) {
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> out;
    for (const auto& c : extract_chunks(tags)) out.emplace_back(c.type, c.start, c.end);
    return out;
  }, py::arg("tags"), "(type, start, end_exclusive) chunks of a BIO sequence.");

  m.def("slot_f1", [](const std::vector<std::vector<std::string>>& gold,
                      const std::vector<std::vector<std::string>>& pred) {
    const auto prf = slot_f1(gold, pred);
    py::dict out;
    out["precision"] = prf.precision;
    out["recall"] = prf.recall;
    out["f1"] = prf.f1;
    return out;
  }, py::arg("gold"), py::arg("pred"));

  m.def("vote_intent", [](const std::vector<int>& labels,
                          std::optional<std::vector<std::uint8_t>> mask) {
    return vote_intent(labels, mask.value_or(std::vector<std::uint8_t>(labels.size(), 1)));
  }, py::arg("labels"), py::arg("mask") = py::none());

  m.def("run_cli", [](const std::vector<std::string>& args, const std::string& stdin_text) {
    std::ostringstream out, err;
    std::istringstream in(stdin_text);
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(args, out, err, in);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), py::arg("stdin") = "",
     "Run the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
