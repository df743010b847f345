#include "megan.h"

#include "megan/dataset.hpp"
#include "megan/errors.hpp"
#include "megan/images.hpp"
#include "megan/metrics.hpp"
#include "megan/svg.hpp"
#include "megan/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

using json = nlohmann::json;

namespace {

thread_local std::string g_last_error;

megan_status fail(megan_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

/// Runs fn, translating exceptions into status codes.
template <typename Fn>
megan_status guarded(Fn&& fn) {
  try {
    fn();
    return MEGAN_OK;
  } catch (const std::invalid_argument& e) {
    return fail(MEGAN_ERR_INVALID_ARGUMENT, e.what());
  } catch (const megan::CorruptionError& e) {
    return fail(MEGAN_ERR_CORRUPT, e.what());
  } catch (const megan::ConfigMismatchError& e) {
    return fail(MEGAN_ERR_CONFIG_MISMATCH, e.what());
  } catch (const std::ios_base::failure& e) {
    return fail(MEGAN_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(MEGAN_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MEGAN_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(MEGAN_ERR_RUNTIME, e.what());
  }
}

megan::train::TrainConfig parse_train_config(const char* config_json) {
  if (config_json == nullptr || config_json[0] == '\0') return megan::train::TrainConfig{};
  return megan::train::TrainConfig::from_json(config_json);
}

}  // namespace

struct megan_dataset {
  megan::data::Dataset ds;
};
struct megan_generator {
  megan::train::GeneratorHandle handle;
};
struct megan_extractor {
  megan::metrics::FeatureExtractor fx;
};

extern "C" {

const char* megan_version(void) { return "1.0.0"; }

const char* megan_status_name(megan_status status) {
  switch (status) {
    case MEGAN_OK: return "ok";
    case MEGAN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MEGAN_ERR_IO: return "io error";
    case MEGAN_ERR_CORRUPT: return "corrupt file";
    case MEGAN_ERR_CONFIG_MISMATCH: return "config mismatch";
    case MEGAN_ERR_RUNTIME: return "runtime error";
  }
  return "unknown";
}

const char* megan_last_error(void) { return g_last_error.c_str(); }

void megan_string_free(char* s) { std::free(s); }

/* ------------------------------------------------------------------ */

megan_status megan_toy_dataset_create(int64_t count, uint64_t seed, const double* disease_mix,
                                      size_t mix_len, megan_dataset** out) {
  if (out == nullptr || disease_mix == nullptr)
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::vector<double> mix(disease_mix, disease_mix + mix_len);
    auto ds = megan::data::synth_toy_dataset(static_cast<int>(count), seed, mix);
    *out = new megan_dataset{std::move(ds)};
  });
}

megan_status megan_dataset_open(const char* dir, megan_dataset** out) {
  if (dir == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new megan_dataset{megan::data::Dataset::load(dir)}; });
}

megan_status megan_dataset_save(const megan_dataset* ds, const char* dir) {
  if (ds == nullptr || dir == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { ds->ds.save(dir); });
}

megan_status megan_dataset_split(const megan_dataset* ds, double train_fraction, uint64_t seed,
                                 megan_dataset** train_out, megan_dataset** test_out) {
  if (ds == nullptr || train_out == nullptr || test_out == nullptr)
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *train_out = nullptr;
  *test_out = nullptr;
  return guarded([&] {
    auto [tr, te] = ds->ds.split(train_fraction, seed);
    *train_out = new megan_dataset{std::move(tr)};
    *test_out = new megan_dataset{std::move(te)};
  });
}

int megan_dataset_count(const megan_dataset* ds) { return ds ? ds->ds.size() : 0; }
int megan_dataset_views(const megan_dataset* ds) { return ds ? ds->ds.views() : 0; }
int megan_dataset_length(const megan_dataset* ds) { return ds ? ds->ds.length() : 0; }
int megan_dataset_diseases(const megan_dataset* ds) { return ds ? ds->ds.diseases() : 0; }

megan_status megan_dataset_signals(const megan_dataset* ds, int index, float* out) {
  if (ds == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto& sig = ds->ds.record(index).signals;
    for (int v = 0; v < sig.rows(); ++v)
      for (int t = 0; t < sig.cols(); ++t) out[static_cast<size_t>(v) * sig.cols() + t] = sig(v, t);
  });
}

megan_status megan_dataset_labels(const megan_dataset* ds, int index, uint8_t* out) {
  if (ds == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto& labels = ds->ds.record(index).labels;
    std::memcpy(out, labels.data(), labels.size());
  });
}

void megan_dataset_free(megan_dataset* ds) { delete ds; }

/* ------------------------------------------------------------------ */

megan_status megan_train(const megan_dataset* train_set, const char* config_json, const char* out_dir,
                         const char* resume_checkpoint) {
  if (train_set == nullptr || out_dir == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const auto cfg = parse_train_config(config_json);
    cfg.validate();
    auto outcome = megan::train::train(train_set->ds, cfg, out_dir,
                                       resume_checkpoint == nullptr ? "" : resume_checkpoint);
    // Loss curves as SVG next to the CSV.
    std::vector<megan::svg::Series> series(5);
    const char* names[5] = {"d_loss", "g_adv", "g_aux", "v_loss", "g_view"};
    for (int i = 0; i < 5; ++i) series[i].name = names[i];
    for (const auto& r : outcome.losses) {
      series[0].y.push_back(r.d_loss);
      series[1].y.push_back(r.g_adv);
      series[2].y.push_back(r.g_aux);
      series[3].y.push_back(r.v_loss);
      series[4].y.push_back(r.g_view);
    }
    if (!outcome.losses.empty())
      megan::svg::write_line_plot((std::filesystem::path(out_dir) / "loss.svg").string(),
                                  "training losses", "step", "loss", series);
  });
}

/* ------------------------------------------------------------------ */

megan_status megan_generator_open(const char* checkpoint_path, megan_generator** out) {
  if (checkpoint_path == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new megan_generator{megan::train::GeneratorHandle(checkpoint_path)}; });
}

int megan_generator_views(const megan_generator* g) { return g ? g->handle.views() : 0; }
int megan_generator_length(const megan_generator* g) { return g ? g->handle.length() : 0; }
int megan_generator_diseases(const megan_generator* g) { return g ? g->handle.diseases() : 0; }

megan_status megan_generate(const megan_generator* g, int count, const uint8_t* condition, uint64_t seed,
                            float* out) {
  if (g == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  if (count < 1) return fail(MEGAN_ERR_INVALID_ARGUMENT, "count must be >= 1");
  return guarded([&] {
    auto samples = g->handle.generate(count, condition, seed);
    const auto views = static_cast<size_t>(g->handle.views());
    const auto length = static_cast<size_t>(g->handle.length());
    for (size_t i = 0; i < samples.size(); ++i)
      for (size_t v = 0; v < views; ++v)
        for (size_t t = 0; t < length; ++t)
          out[(i * views + v) * length + t] = samples[i](static_cast<int>(v), static_cast<int>(t));
  });
}

megan_status megan_generate_to_dir(const megan_generator* g, int count, int condition_index, uint64_t seed,
                                   const char* out_dir, int max_plots) {
  if (g == nullptr || out_dir == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  if (count < 1) return fail(MEGAN_ERR_INVALID_ARGUMENT, "count must be >= 1");
  if (condition_index >= g->handle.diseases())
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "condition index out of range");
  return guarded([&] {
    const int k = g->handle.diseases();
    std::vector<uint8_t> cond(static_cast<size_t>(k), 0);
    if (condition_index >= 0) cond[condition_index] = 1;
    auto samples = g->handle.generate(count, cond.data(), seed);

    std::vector<std::string> label_names;
    for (int j = 0; j < k; ++j) label_names.push_back("condition_" + std::to_string(j));
    megan::data::Dataset ds(g->handle.views(), g->handle.length(), label_names);
    char id[32];
    for (size_t i = 0; i < samples.size(); ++i) {
      std::snprintf(id, sizeof(id), "gen-%06zu", i);
      ds.add(megan::data::MultiViewRecord{samples[i], cond, id});
    }
    ds.save(out_dir);

    // Per-view panel labels carry the viewpoint angles.
    const auto& table = megan::data::ViewpointTable::standard12();
    std::vector<std::string> panels;
    for (const auto& a : table.angles()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "view %zu (th=%.2f, ph=%.2f)", panels.size() + 1, a.theta, a.phi);
      panels.push_back(buf);
    }
    const int plots = std::min<int>(max_plots, static_cast<int>(samples.size()));
    for (int i = 0; i < plots; ++i) {
      std::snprintf(id, sizeof(id), "record_%06d.svg", i);
      std::string title = condition_index < 0 ? "generated (no condition)"
                                              : "generated (condition " + std::to_string(condition_index) + ")";
      megan::svg::write_record_panels((std::filesystem::path(out_dir) / id).string(), samples[i], title,
                                      panels);
    }
  });
}

void megan_generator_free(megan_generator* g) { delete g; }

/* ------------------------------------------------------------------ */

megan_status megan_synth_image_corpus(int count, int classes, uint64_t seed, const char* out_dir) {
  if (out_dir == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] { megan::img::synth_image_corpus(count, classes, seed).save(out_dir); });
}

megan_status megan_pretrain_extractor(const char* corpus_dir, int epochs, uint64_t seed,
                                      const char* out_checkpoint, double* eval_accuracy) {
  if (corpus_dir == nullptr || out_checkpoint == nullptr)
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    auto corpus = megan::img::ImageCorpus::load(corpus_dir);
    megan::metrics::PretrainReport report;
    auto fx = megan::metrics::FeatureExtractor::pretrain(corpus, epochs, seed, &report);
    fx.save(out_checkpoint);
    if (eval_accuracy != nullptr) *eval_accuracy = report.eval_accuracy;
  });
}

megan_status megan_extractor_open(const char* checkpoint_path, megan_extractor** out) {
  if (checkpoint_path == nullptr || out == nullptr) return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] {
    *out = new megan_extractor{megan::metrics::FeatureExtractor::load(checkpoint_path)};
  });
}

void megan_extractor_free(megan_extractor* fx) { delete fx; }

megan_status megan_eval(const megan_generator* g, const megan_dataset* ds, const megan_extractor* fx,
                        const char* options_json, char** report_json_out) {
  if (g == nullptr || ds == nullptr || fx == nullptr || report_json_out == nullptr)
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  *report_json_out = nullptr;
  return guarded([&] {
    megan::metrics::EvalOptions opt;
    if (options_json != nullptr && options_json[0] != '\0') {
      json j = json::parse(options_json);
      opt.seed = j.value("seed", opt.seed);
      opt.onnc_samples = j.value("onnc_samples", opt.onnc_samples);
      opt.embedder_steps = j.value("embedder_steps", opt.embedder_steps);
      opt.consistency_samples = j.value("consistency_samples", opt.consistency_samples);
      opt.with_augmentation = j.value("with_augmentation", opt.with_augmentation);
    }
    auto report = megan::metrics::evaluate_generator(g->handle, ds->ds, fx->fx, opt);
    const std::string text = report.to_json();
    char* buf = static_cast<char*>(std::malloc(text.size() + 1));
    if (buf == nullptr) throw std::bad_alloc();
    std::memcpy(buf, text.c_str(), text.size() + 1);
    *report_json_out = buf;
  });
}

megan_status megan_perturb(const megan_dataset* ds, const megan_extractor* fx, int steps, int max_samples,
                           uint64_t seed, const char* out_dir) {
  if (ds == nullptr || fx == nullptr || out_dir == nullptr)
    return fail(MEGAN_ERR_INVALID_ARGUMENT, "null argument");
  if (steps < 1) return fail(MEGAN_ERR_INVALID_ARGUMENT, "steps must be >= 1");
  return guarded([&] {
    megan::metrics::PerturbOptions opt;
    opt.steps = steps;
    if (max_samples > 0) opt.max_samples_per_half = max_samples;
    opt.seed = seed;
    auto curves = megan::metrics::perturbation_suite(ds->ds, fx->fx, opt);

    std::filesystem::create_directories(out_dir);
    auto write_csv = [&](const char* name, const std::vector<double>& curve) {
      std::ofstream f(std::filesystem::path(out_dir) / name);
      if (!f) throw std::runtime_error(std::string("cannot write ") + name);
      f << "step,rfid\n";
      char line[64];
      for (size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.9g\n", i, curve[i]);
        f << line;
      }
    };
    write_csv("noise.csv", curves.noise);
    write_csv("erase.csv", curves.erase);
    write_csv("blur.csv", curves.blur);
    megan::svg::write_line_plot((std::filesystem::path(out_dir) / "perturbation.svg").string(),
                                "rFID under cumulative perturbations", "step", "rFID",
                                {{"noise", curves.noise}, {"erase", curves.erase}, {"blur", curves.blur}});
  });
}

} /* extern "C" */
