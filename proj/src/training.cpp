#include "megan/training.hpp"

#include "megan/adam.hpp"
#include "megan/checkpoint.hpp"
#include "megan/errors.hpp"
#include "megan/gan.hpp"

#include <nlohmann/json.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace megan::train {

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (iterations < 0) throw std::invalid_argument("train: iterations must be >= 0");
  if (!(lr > 0.0) && lr != 0.0) throw std::invalid_argument("train: lr must be >= 0");
  if (lr < 0.0) throw std::invalid_argument("train: lr must be >= 0");
  if (lsgan_a == lsgan_b) throw std::invalid_argument("train: LSGAN targets a and b must differ");
  if (checkpoint_interval < 0) throw std::invalid_argument("train: checkpoint_interval must be >= 0");
}

std::string TrainConfig::json() const {
  ::json j;
  j["batch"] = batch;
  j["iterations"] = iterations;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["lsgan_a"] = lsgan_a;
  j["lsgan_b"] = lsgan_b;
  j["seed"] = seed;
  j["no_disease"] = no_disease;
  j["checkpoint_interval"] = checkpoint_interval;
  j["clip_grads"] = clip_grads;
  j["clip_norm"] = clip_norm;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  ::json j = ::json::parse(text);
  TrainConfig c;
  c.batch = j.value("batch", c.batch);
  c.iterations = j.value("iterations", c.iterations);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.lsgan_a = j.value("lsgan_a", c.lsgan_a);
  c.lsgan_b = j.value("lsgan_b", c.lsgan_b);
  c.seed = j.value("seed", c.seed);
  c.no_disease = j.value("no_disease", c.no_disease);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.clip_grads = j.value("clip_grads", c.clip_grads);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  return c;
}

bool LossReport::finite() const {
  return std::isfinite(d_loss) && std::isfinite(g_adv) && std::isfinite(g_aux) && std::isfinite(v_loss) &&
         std::isfinite(g_view);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

std::string rng_to_string(const Rng& rng) {
  const auto s = rng.save();
  char buf[80];
  std::uint64_t spare_bits;
  std::memcpy(&spare_bits, &s.spare, sizeof(spare_bits));
  std::snprintf(buf, sizeof(buf), "%" PRIu64 ":%d:%" PRIx64, s.state, s.has_spare ? 1 : 0, spare_bits);
  return buf;
}

void rng_from_string(Rng& rng, const std::string& text) {
  Rng::State s;
  std::uint64_t spare_bits = 0;
  int has_spare = 0;
  if (std::sscanf(text.c_str(), "%" SCNu64 ":%d:%" SCNx64, &s.state, &has_spare, &spare_bits) != 3)
    throw CorruptionError("bad rng state in checkpoint: " + text);
  s.has_spare = has_spare != 0;
  std::memcpy(&s.spare, &spare_bits, sizeof(s.spare));
  rng.restore(s);
}

}  // namespace

struct Trainer::Impl {
  const data::Dataset& ds;
  TrainConfig cfg;
  gen::GenConfig gcfg;
  disc::DiscConfig dcfg;
  GanModel<float> gan;
  nn::Adam<float> opt_g, opt_d, opt_v;
  Rng rng_data, rng_noise, rng_view;
  long step_idx = 0;

  Impl(const data::Dataset& train_set, const TrainConfig& config)
      : ds(train_set), cfg(config),
        gcfg(make_gcfg(train_set)), dcfg(make_dcfg(train_set)),
        gan(gcfg, dcfg, data::ViewpointTable::standard12().encoding(), Rng(config.seed).child(0)),
        opt_g(gan.g.params(), static_cast<float>(config.lr), static_cast<float>(config.beta1),
              static_cast<float>(config.beta2)),
        opt_d(gan.d.params(), static_cast<float>(config.lr), static_cast<float>(config.beta1),
              static_cast<float>(config.beta2)),
        opt_v(gan.v.params(), static_cast<float>(config.lr), static_cast<float>(config.beta1),
              static_cast<float>(config.beta2)),
        rng_data(Rng(config.seed).child(1)), rng_noise(Rng(config.seed).child(2)),
        rng_view(Rng(config.seed).child(3)) {
    cfg.validate();
    if (train_set.size() < 1) throw std::invalid_argument("train: empty dataset");
    gan.g.set_training(true);
  }

  static gen::GenConfig make_gcfg(const data::Dataset& ds) {
    gen::GenConfig g;
    g.cond_dim = ds.diseases();
    g.views = ds.views();
    g.length = ds.length();
    if (ds.length() != 512) throw std::invalid_argument("train: generator requires length 512");
    return g;
  }
  static disc::DiscConfig make_dcfg(const data::Dataset& ds) {
    disc::DiscConfig d;
    d.cond_dim = ds.diseases();
    d.views = ds.views();
    d.length = ds.length();
    return d;
  }

  Tensor<float> sample_noise(int batch) {
    Tensor<float> z(batch, gcfg.noise_dim, 1);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < gcfg.noise_dim; ++i) z.m(i, b) = static_cast<float>(rng_noise.normal());
    return z;
  }

  Tensor<float> crops_of(const Tensor<float>& x, const Eigen::MatrixXi& p, int eps) {
    auto shuffled = disc::shuffle_views(x, p);
    auto pe = disc::positional_encode(shuffled, dcfg.pe_channels);
    return disc::crop_window(pe, eps, dcfg.crop_length);
  }

  Tensor<float> crops_backward(const Tensor<float>& d_crops, const Eigen::MatrixXi& p, int eps) {
    auto d_pe = disc::crop_window_backward(d_crops, eps, dcfg.length);
    auto d_shuf = disc::positional_encode_backward(d_pe, dcfg.views);
    return disc::shuffle_views_backward(d_shuf, p);
  }

  LossReport step() {
    const int B = cfg.batch;
    const int n = dcfg.views;
    const int k = gcfg.cond_dim;

    // Assemble the real batch; fake conditions reuse the real labels so the
    // condition distribution matches the data.
    Tensor<float> real(B, n, dcfg.length);
    Mat<float> labels = Mat<float>::Zero(k, B);
    for (int b = 0; b < B; ++b) {
      const auto& rec = ds.record(static_cast<int>(rng_data.below(ds.size())));
      real.sample(b) = rec.signals;
      if (!cfg.no_disease)
        for (int j = 0; j < k; ++j) labels(j, b) = static_cast<float>(rec.labels[j]);
    }
    Tensor<float> cond(B, k, 1);
    cond.m = labels;

    // (1) Major discriminator.
    Tensor<float> z1 = sample_noise(B);
    Tensor<float> fake1 = gan.g.forward(z1, cond, gan.theta_enc);
    megan::zero_grads(gan.d.params());
    const double dl = d_loss(gan.d, real, labels, fake1, cfg.lsgan_a, cfg.lsgan_b, cfg.no_disease, true);
    if (cfg.clip_grads) megan::clip_grad_norm(gan.d.params(), cfg.clip_norm);
    opt_d.step();

    // (2) View discriminator: one shared (P, eps) per step for the real and
    // fake branches (asserted by construction here).
    Eigen::MatrixXi perm = disc::random_permutation(n, rng_view);
    const int eps = disc::random_crop_offset(dcfg.length, dcfg.crop_length, rng_view);
    Tensor<float> real_crops = crops_of(real, perm, eps);
    Tensor<float> fake_crops = crops_of(fake1, perm, eps);
    Vec<float> target = flatten_encoding(Mat<float>(disc::shuffle_rows(gan.theta_enc, perm)));
    megan::zero_grads(gan.v.params());
    const double vl = v_loss(gan.v, real_crops, fake_crops, target, true);
    if (cfg.clip_grads) megan::clip_grad_norm(gan.v.params(), cfg.clip_norm);
    opt_v.step();

    // (3) Generator on the summed major + view objectives (equal weights).
    Tensor<float> z2 = sample_noise(B);
    Tensor<float> fake2 = gan.g.forward(z2, cond, gan.theta_enc);
    megan::zero_grads(gan.g.params());
    Tensor<float> d_fake(B, n, dcfg.length);
    const GMajorLoss gm = g_loss_major(gan.d, fake2, labels, cfg.lsgan_a, cfg.no_disease, &d_fake);
    Tensor<float> fake2_crops = crops_of(fake2, perm, eps);
    Tensor<float> d_crops;
    const double gv = g_loss_view(gan.v, real_crops, fake2_crops, &d_crops);
    d_fake.m += crops_backward(d_crops, perm, eps).m;
    gan.g.backward(d_fake, true);
    if (cfg.clip_grads) megan::clip_grad_norm(gan.g.params(), cfg.clip_norm);
    opt_g.step();

    LossReport report{step_idx, dl, gm.adv, gm.aux, vl, gv};
    ++step_idx;
    if (!report.finite()) {
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "training aborted at step %ld: non-finite loss (d=%g g_adv=%g g_aux=%g v=%g g_view=%g)",
                    report.step, report.d_loss, report.g_adv, report.g_aux, report.v_loss, report.g_view);
      throw std::runtime_error(buf);
    }
    return report;
  }

  std::string combined_config() const {
    ::json j;
    j["gen"] = ::json::parse(gcfg.json());
    j["disc"] = ::json::parse(dcfg.json());
    j["train"] = ::json::parse(cfg.json());
    return j.dump();
  }

  Checkpoint snapshot() {
    Checkpoint ckpt;
    ckpt.kind = "train_state";
    ckpt.config_json = combined_config();
    auto put_params = [&](const ParamRefs<float>& ps) {
      for (const auto* p : ps) ckpt.put(p->name, p->data);
    };
    put_params(gan.g.params());
    put_params(gan.d.params());
    put_params(gan.v.params());
    auto put_moments = [&](nn::Adam<float>& opt) {
      for (auto& m : opt.moments()) ckpt.put(m.name, *m.m);
    };
    put_moments(opt_g);
    put_moments(opt_d);
    put_moments(opt_v);
    ckpt.extras["step"] = std::to_string(step_idx);
    ckpt.extras["adam_t_g"] = std::to_string(opt_g.step_count());
    ckpt.extras["adam_t_d"] = std::to_string(opt_d.step_count());
    ckpt.extras["adam_t_v"] = std::to_string(opt_v.step_count());
    ckpt.extras["rng_data"] = rng_to_string(rng_data);
    ckpt.extras["rng_noise"] = rng_to_string(rng_noise);
    ckpt.extras["rng_view"] = rng_to_string(rng_view);
    ckpt.extras["gen_config"] = gcfg.json();
    return ckpt;
  }

  void restore(const Checkpoint& ckpt) {
    ckpt.expect("train_state", combined_config());
    auto load_params = [&](const ParamRefs<float>& ps) {
      for (auto* p : ps) from_f32(ckpt.get(p->name), p->data);
    };
    load_params(gan.g.params());
    load_params(gan.d.params());
    load_params(gan.v.params());
    auto load_moments = [&](nn::Adam<float>& opt, const char* t_key) {
      for (auto& m : opt.moments()) from_f32(ckpt.get(m.name), *m.m);
      opt.set_step_count(std::stol(ckpt.extras.at(t_key)));
    };
    load_moments(opt_g, "adam_t_g");
    load_moments(opt_d, "adam_t_d");
    load_moments(opt_v, "adam_t_v");
    step_idx = std::stol(ckpt.extras.at("step"));
    rng_from_string(rng_data, ckpt.extras.at("rng_data"));
    rng_from_string(rng_noise, ckpt.extras.at("rng_noise"));
    rng_from_string(rng_view, ckpt.extras.at("rng_view"));
  }
};

Trainer::Trainer(const data::Dataset& train_set, const TrainConfig& cfg)
    : impl_(std::make_unique<Impl>(train_set, cfg)) {}
Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;

LossReport Trainer::step() { return impl_->step(); }
long Trainer::step_index() const { return impl_->step_idx; }

void Trainer::save_state(const std::string& path) const { impl_->snapshot().save(path); }
void Trainer::load_state(const std::string& path) { impl_->restore(Checkpoint::load(path)); }

void Trainer::save_generator(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.config_json = impl_->gcfg.json();
  impl_->gan.g.save_into(ckpt);
  ckpt.save(path);
}

std::vector<std::pair<std::string, Eigen::MatrixXf>> Trainer::parameter_snapshot(char net) const {
  const ParamRefs<float>& ps = net == 'g'   ? impl_->gan.g.params()
                               : net == 'd' ? impl_->gan.d.params()
                                            : impl_->gan.v.params();
  std::vector<std::pair<std::string, Eigen::MatrixXf>> out;
  out.reserve(ps.size());
  for (const auto* p : ps) out.emplace_back(p->name, p->data);
  return out;
}

// ---------------------------------------------------------------------------
// Full loop
// ---------------------------------------------------------------------------

TrainOutcome train(const data::Dataset& train_set, const TrainConfig& cfg, const std::string& out_dir,
                   const std::string& resume_from) {
  fs::create_directories(out_dir);
  Trainer trainer(train_set, cfg);
  if (!resume_from.empty()) trainer.load_state(resume_from);

  const fs::path dir(out_dir);
  std::ofstream csv(dir / "loss.csv", resume_from.empty() ? std::ios::trunc : std::ios::app);
  if (!csv) throw std::runtime_error("cannot write loss.csv under " + out_dir);
  if (resume_from.empty()) csv << "step,d_loss,g_adv,g_aux,v_loss,g_view\n";

  TrainOutcome outcome;
  char line[256];
  while (trainer.step_index() < cfg.iterations) {
    const LossReport r = trainer.step();
    std::snprintf(line, sizeof(line), "%ld,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.d_loss, r.g_adv, r.g_aux,
                  r.v_loss, r.g_view);
    csv << line;
    outcome.losses.push_back(r);
    if (cfg.checkpoint_interval > 0 && trainer.step_index() % cfg.checkpoint_interval == 0 &&
        trainer.step_index() < cfg.iterations) {
      char name[64];
      std::snprintf(name, sizeof(name), "train_state_%06ld.megan", trainer.step_index());
      trainer.save_state((dir / name).string());
    }
  }
  csv.flush();

  outcome.state_checkpoint = (dir / "train_state_final.megan").string();
  outcome.generator_checkpoint = (dir / "generator.megan").string();
  trainer.save_state(outcome.state_checkpoint);
  trainer.save_generator(outcome.generator_checkpoint);
  return outcome;
}

// ---------------------------------------------------------------------------
// Inference handle
// ---------------------------------------------------------------------------

namespace {

gen::GenConfig gen_config_from_json(const std::string& text) {
  ::json j = ::json::parse(text);
  gen::GenConfig g;
  g.common_channels = j.at("common_channels").get<int>();
  g.cond_dim = j.at("cond_dim").get<int>();
  g.cond_style_dim = j.at("cond_style_dim").get<int>();
  g.hidden_dim = j.at("hidden_dim").get<int>();
  g.length = j.at("length").get<int>();
  g.noise_dim = j.at("noise_dim").get<int>();
  g.style_dim = j.at("style_dim").get<int>();
  g.views = j.at("views").get<int>();
  return g;
}

}  // namespace

struct GeneratorHandle::Impl {
  gen::GenConfig gcfg;
  std::unique_ptr<gen::Generator<float>> net;
  Mat<float> theta_enc;

  explicit Impl(const std::string& path) {
    Checkpoint ckpt = Checkpoint::load(path);
    std::string gen_json;
    if (ckpt.kind == "generator") {
      gen_json = ckpt.config_json;
    } else if (ckpt.kind == "train_state") {
      gen_json = ckpt.extras.at("gen_config");
    } else {
      throw ConfigMismatchError("checkpoint kind '" + ckpt.kind + "' holds no generator");
    }
    gcfg = gen_config_from_json(gen_json);
    if (gcfg.json() != gen_json)
      throw ConfigMismatchError("unsupported generator config: " + gen_json);
    Rng rng(0);  // weights are overwritten below
    net = std::make_unique<gen::Generator<float>>(gcfg, rng);
    for (auto* p : net->params()) from_f32(ckpt.get(p->name), p->data);
    net->set_training(false);
    theta_enc = data::ViewpointTable::standard12().encoding().cast<float>();
  }
};

GeneratorHandle::GeneratorHandle(const std::string& path) : impl_(std::make_unique<Impl>(path)) {}
GeneratorHandle::~GeneratorHandle() = default;
GeneratorHandle::GeneratorHandle(GeneratorHandle&&) noexcept = default;

int GeneratorHandle::views() const { return impl_->gcfg.views; }
int GeneratorHandle::length() const { return impl_->gcfg.length; }
int GeneratorHandle::diseases() const { return impl_->gcfg.cond_dim; }

std::vector<Eigen::MatrixXf> GeneratorHandle::generate_mixed(
    const std::vector<std::vector<std::uint8_t>>& conds, std::uint64_t seed) const {
  const auto& cfg = impl_->gcfg;
  Rng rng = Rng(seed).child(0x5a);
  std::vector<Eigen::MatrixXf> out;
  out.reserve(conds.size());
  // Per-sample forward keeps the output independent of the requested count.
  for (const auto& cond : conds) {
    if (static_cast<int>(cond.size()) != cfg.cond_dim)
      throw std::invalid_argument("generate: condition length mismatch");
    Tensor<float> z(1, cfg.noise_dim, 1);
    for (int i = 0; i < cfg.noise_dim; ++i) z.m(i, 0) = static_cast<float>(rng.normal());
    Tensor<float> c(1, cfg.cond_dim, 1);
    for (int j = 0; j < cfg.cond_dim; ++j) c.m(j, 0) = static_cast<float>(cond[j]);
    out.push_back(impl_->net->forward(z, c, impl_->theta_enc).m);
  }
  return out;
}

std::vector<Eigen::MatrixXf> GeneratorHandle::generate(int count, const std::uint8_t* cond,
                                                       std::uint64_t seed) const {
  std::vector<std::uint8_t> c(static_cast<size_t>(diseases()), 0);
  if (cond != nullptr) c.assign(cond, cond + diseases());
  return generate_mixed(std::vector<std::vector<std::uint8_t>>(count, c), seed);
}

}  // namespace megan::train
