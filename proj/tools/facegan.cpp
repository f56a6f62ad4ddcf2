#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "facegan/evaluation.hpp"
#include "facegan/generation.hpp"
#include "facegan/io.hpp"
#include "facegan/parallel.hpp"
#include "facegan/pipeline.hpp"
#include "facegan/synth.hpp"
#include "facegan/training.hpp"

using namespace facegan;
using json = nlohmann::ordered_json;

namespace {

constexpr int kUsage = 1, kData = 2, kNumerical = 3;

void log(const std::string& s) { std::cerr << s << std::endl; }

std::string numbered(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu%s", i, ext);
  return buf;
}

RunConfig config_for(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig c;
  c.net.resolution = 32;
  c.net.base_filters = 16;
  c.net.latent_dim = 16;
  if (!path.empty()) c = load_config(path, c);
  if (seed) c.train.seed = *seed;
  return c;
}

int label_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  std::string all;
  for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
  throw DataError("unknown label '" + name + "' (known: " + all + ")");
}

// Recorded relative to the checkpoint's directory.
fs::path data_dir_of(const Checkpoint& ck, const fs::path& ck_path, const std::string& override_dir) {
  if (!override_dir.empty()) return override_dir;
  const auto it = ck.meta.find("data");
  if (it == ck.meta.end()) throw DataError("model does not record its data directory; pass --data");
  return (fs::absolute(ck_path).parent_path() / it->second).lexically_normal();
}

bool model_uses_labels(const NetParams<float>& g) { return g.config.label_channels > 0; }

json stats(const ErrorDistribution& e, const CedCurve& c) {
  return {{"mean", e.mean()}, {"std", e.stddev()}, {"auc", c.auc}, {"fr", c.fr}, {"count", e.values.size()}};
}

void write_ced_csv(const fs::path& path, const std::vector<std::pair<std::string, CedCurve>>& curves) {
  std::string out = "x";
  for (const auto& [name, c] : curves) out += "," + name;
  out += "\n";
  for (std::size_t i = 0; i < curves.front().second.x.size(); ++i) {
    out += format_number(curves.front().second.x[i]);
    for (const auto& [name, c] : curves) out += "," + format_number(c.y[i]);
    out += "\n";
  }
  write_text(path, out);
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  SynthOptions o;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const SynthDataset ds = synth_dataset(a.o);
  MeshCollection c;
  c.templ = ds.templ;
  c.meshes = ds.meshes;
  c.noisy = ds.noisy;
  c.subject = ds.subject;
  c.label = ds.label;
  c.label_names = ds.label_names;
  for (std::size_t i = 0; i < ds.meshes.size(); ++i) c.files.push_back(numbered(i, ".obj"));
  save_mesh_collection(a.out, c);
  log("wrote " + std::to_string(ds.meshes.size()) + " meshes to " + a.out);
  return 0;
}

// ---- preprocess ----------------------------------------------------------

struct PreprocessArgs {
  std::string in, templ, landmarks, out;
  int res = 32;
  bool reg = false;
  double train_fraction = 0.85;
  std::uint64_t seed = 0;
  std::optional<double> scale;
};

int run_preprocess(const PreprocessArgs& a) {
  const MeshCollection c = load_mesh_collection(a.in, a.templ, a.landmarks);
  PreprocessOptions o;
  o.resolution = a.res;
  o.register_scans = a.reg;
  o.scale = a.scale;
  o.threads = worker_count();
  DataDir d;
  if (c.noisy.empty()) {
    Preprocessed p = preprocess(c.meshes, c.templ, o);
    d.layout = std::move(p.layout);
    d.scale = p.scale;
    d.targets = std::move(p.maps);
  } else {
    PreprocessedPairs p = preprocess_pairs(c.noisy, c.meshes, c.templ, o);
    d.layout = std::move(p.targets.layout);
    d.scale = p.targets.scale;
    d.targets = std::move(p.targets.maps);
    d.inputs = std::move(p.input_maps);
  }
  d.templ = c.templ;
  d.files = c.files;
  d.subject = c.subject;
  d.label = c.label;
  d.label_names = c.label_names;
  const Split s = split_indices(d.targets.size(), a.train_fraction, a.seed, d.subject);
  d.test.assign(d.targets.size(), false);
  for (std::size_t i : s.test) d.test[i] = true;
  save_data_dir(a.out, d);
  log("preprocessed " + std::to_string(d.targets.size()) + " samples (" + std::to_string(s.test.size()) +
      " test) at " + std::to_string(a.res) + "x" + std::to_string(a.res) + ", scale " + format_number(d.scale));
  return 0;
}

// ---- pretrain / train ----------------------------------------------------

struct TrainArgs {
  std::string data, config, out, pretrained, resume, task = "represent";
  bool labels = false;
  std::optional<std::uint64_t> seed;
};

void annotate(Checkpoint& ck, const TrainArgs& a, const DataDir& d, const fs::path& ck_path) {
  ck.meta["data"] = fs::absolute(a.data).lexically_relative(fs::absolute(ck_path).parent_path()).generic_string();
  ck.meta["task"] = a.task;
  ck.meta["scale"] = format_number(d.scale);
  std::string names;
  for (const auto& n : d.label_names) names += (names.empty() ? "" : ",") + n;
  ck.meta["labels"] = a.labels ? names : "";
}

int run_pretrain(const TrainArgs& a) {
  const DataDir d = load_data_dir(a.data);
  RunConfig rc = config_for(a.config, a.seed);
  rc.net.label_channels = a.labels ? static_cast<int>(d.label_names.size()) : 0;
  const PairedDataset train = d.dataset(false, false, a.labels);
  PretrainState st;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    st = to_pretrain_state(ck);
    rc.train = ck.train;
    if (st.d.config.label_channels != rc.net.label_channels) throw DataError(a.resume + ": label channels differ from --labels");
  } else {
    st = pretrain_init(rc.net, rc.train);
  }
  const auto save = [&](const PretrainState& s) {
    Checkpoint ck = make_checkpoint(s, rc.train);
    annotate(ck, a, d, a.out);
    save_checkpoint(a.out, ck);
  };
  pretrain_discriminator(st, train, rc.train, [&](const PretrainState& s) {
    log("pretrain epoch " + std::to_string(s.epoch) + " loss " + format_number(s.history.back()));
    if (rc.train.checkpoint_every > 0 && s.epoch % rc.train.checkpoint_every == 0) save(s);
  });
  save(st);
  save_loss_csv(sibling(a.out, "_loss.csv"), st.history);
  return 0;
}

int run_train(const TrainArgs& a) {
  const DataDir d = load_data_dir(a.data);
  if (a.task != "represent" && a.task != "translate") throw DataError("task must be represent or translate");
  const bool translate = a.task == "translate";
  const PairedDataset train = d.dataset(false, translate, a.labels);
  const fs::path out = a.out;
  fs::create_directories(out);

  AdversarialState st;
  TrainConfig cfg;
  if (!a.resume.empty()) {
    const Checkpoint ck = load_checkpoint(a.resume);
    st = to_adversarial_state(ck);
    cfg = ck.train;
  } else {
    const Checkpoint pre = load_checkpoint(a.pretrained);
    cfg = a.config.empty() ? pre.train : config_for(a.config, std::nullopt).train;
    if (a.seed) cfg.seed = *a.seed;
    st = adversarial_init(pre.d, cfg);
  }
  const int want = a.labels ? static_cast<int>(d.label_names.size()) : 0;
  if (st.d.config.label_channels != want)
    throw DataError("model has " + std::to_string(st.d.config.label_channels) + " label channels, data gives " +
                    std::to_string(want) + (a.labels ? "" : " (pass --labels for a conditioned model)"));

  const auto save_state = [&](const AdversarialState& s) {
    Checkpoint ck = make_checkpoint(s, cfg);
    annotate(ck, a, d, out / "state.ckpt");
    save_checkpoint(out / "state.ckpt", ck);
  };
  train_adversarial(st, train, cfg, [&](const AdversarialState& s) {
    const auto& h = s.history.back();
    log("epoch " + std::to_string(s.epoch) + " L_D " + format_number(h.l_d) + " L_G " + format_number(h.l_g) +
        " L_rec " + format_number(h.l_rec));
    if (cfg.checkpoint_every > 0 && s.epoch % cfg.checkpoint_every == 0) save_state(s);
  });
  save_state(st);
  for (const auto& [name, net] : {std::pair{"G.ckpt", &st.g}, std::pair{"D.ckpt", &st.d}}) {
    Checkpoint ck = make_network_checkpoint(*net, cfg);
    annotate(ck, a, d, out / name);
    save_checkpoint(out / name, ck);
  }
  save_loss_csv(out / "loss.csv", st.history);
  return 0;
}

// ---- generate ------------------------------------------------------------

struct GenerateArgs {
  std::string model, gaussian, label, out, data;
  int n = 10;
  std::uint64_t seed = 0;
};

std::map<int, LatentGaussian> gaussians_for(const NetParams<float>& g, const DataDir& d, const std::string& path) {
  if (!path.empty() && fs::exists(path)) return load_gaussians(path);
  const auto gs = fit_label_gaussians(g, d.dataset(false, false, model_uses_labels(g)));
  if (!path.empty()) save_gaussians(path, gs);
  return gs;
}

const LatentGaussian& pick_gaussian(const std::map<int, LatentGaussian>& gs, const NetParams<float>& g,
                                    const DataDir& d, const std::string& label) {
  int key = -1;
  if (model_uses_labels(g)) key = label.empty() ? 0 : label_index(d.label_names, label);
  else if (!label.empty()) throw DataError("--label given but the model is not label-conditioned");
  const auto it = gs.find(key);
  if (it == gs.end()) throw DataError("Gaussian file has no entry for label " + std::to_string(key));
  return it->second;
}

int run_generate(const GenerateArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const NetParams<float>& g = inference_network(ck);
  const DataDir d = load_data_dir(data_dir_of(ck, a.model, a.data));
  const auto gs = gaussians_for(g, d, a.gaussian);
  const LatentGaussian& lg = pick_gaussian(gs, g, d, a.label);
  std::mt19937_64 rng(a.seed);
  fs::create_directories(a.out);
  for (int i = 0; i < a.n; ++i) {
    const GeneratedFace f = generate_face(g, sample_latent(lg, rng), d.layout, d.templ);
    save_obj(fs::path(a.out) / numbered(static_cast<std::size_t>(i), ".obj"), unnormalize(f.mesh, d.scale));
  }
  log("generated " + std::to_string(a.n) + " meshes in " + a.out);
  return 0;
}

// ---- translate -----------------------------------------------------------

struct TranslateArgs {
  std::string model, in, out, label, data;
};

std::vector<UVMap> run_network(const NetParams<float>& g, std::vector<UVMap> maps, int label, int label_count) {
  std::vector<int> labels;
  if (label_count > 0) labels.assign(maps.size(), label);
  PairedDataset ds;
  ds.targets = maps;
  ds.inputs = std::move(maps);
  ds.labels = std::move(labels);
  ds.label_count = label_count;
  return reconstruct(g, ds);
}

int run_translate(const TranslateArgs& a) {
  const Checkpoint ck = load_checkpoint(a.model);
  const NetParams<float>& g = inference_network(ck);
  const DataDir d = load_data_dir(data_dir_of(ck, a.model, a.data));
  const MeshCollection c = load_mesh_collection(a.in, fs::path(data_dir_of(ck, a.model, a.data)) / "template.obj");
  int label = 0;
  if (model_uses_labels(g)) label = a.label.empty() ? 0 : label_index(d.label_names, a.label);
  else if (!a.label.empty()) throw DataError("--label given but the model is not label-conditioned");

  const UVRaster raster = build_raster(d.layout, g.config.resolution);
  std::vector<UVMap> maps(c.meshes.size());
  std::vector<SimilarityTransform> to_model(c.meshes.size());
  parallel_for(c.meshes.size(), worker_count(), [&](std::size_t i) {
    to_model[i] = procrustes_align(c.meshes[i].vertices, d.templ.vertices);
    const Mesh m = c.meshes[i].with_vertices(to_model[i].apply(c.meshes[i].vertices) / d.scale);
    maps[i] = rasterize_uv(m, raster, d.layout.faces);
  });
  const std::vector<UVMap> outs = run_network(g, std::move(maps), label, g.config.label_channels);
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const Mesh m = sample_mesh_from_uv(outs[i], d.layout, d.templ);
    save_obj(fs::path(a.out) / c.files[i], m.with_vertices(to_model[i].inverse().apply(m.vertices * d.scale)));
  }
  log("translated " + std::to_string(outs.size()) + " meshes into " + a.out);
  return 0;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  std::string task, model, data, out, gaussian, label;
  int pca_k = 16;
  int n = 1000;
  std::uint64_t seed = 0;
  std::optional<double> x_max, threshold;
};

int run_evaluate(const EvaluateArgs& a) {
  const bool identity = a.model == "identity";
  std::optional<Checkpoint> ck;
  if (!identity) ck = load_checkpoint(a.model);
  const fs::path data_path = a.data.empty() ? (ck ? data_dir_of(*ck, a.model, "") : fs::path()) : fs::path(a.data);
  if (data_path.empty()) throw DataError("--data is required with the identity model");
  const DataDir d = load_data_dir(data_path);
  if (!fs::path(a.out).parent_path().empty()) fs::create_directories(fs::path(a.out).parent_path());
  const NetParams<float>* g = ck ? &inference_network(*ck) : nullptr;
  const bool labels = g && model_uses_labels(*g);
  const int label_count = labels ? static_cast<int>(d.label_names.size()) : 0;

  json report;
  report["task"] = a.task;

  const auto test_idx = d.indices(true);
  const auto train_idx = d.indices(false);
  const auto meshes_of = [&](const std::vector<UVMap>& maps, std::span<const std::size_t> idx) {
    std::vector<UVMap> sel;
    for (std::size_t i : idx) sel.push_back(maps[i]);
    return maps_to_meshes(sel, d.layout, d.templ);
  };

  if (a.task == "represent") {
    const double x_max = a.x_max.value_or(0.01), thr = a.threshold.value_or(x_max);
    const PairedDataset test = d.dataset(true, false, labels);
    const std::vector<Mesh> gt = meshes_of(d.targets, test_idx);
    const std::vector<Mesh> rec = identity ? gt : maps_to_meshes(reconstruct(*g, test), d.layout, d.templ);
    const ErrorDistribution e = generalization_errors(rec, gt);
    const std::vector<Mesh> train_m = meshes_of(d.targets, train_idx);
    const PCAModel pca = pca_fit_k(train_m, a.pca_k);
    const ErrorDistribution pe = generalization_errors([&](const Mesh& m) { return pca_reconstruct(pca, m); }, gt);
    const CedCurve c = ced_auc_fr(e, x_max, thr), pc = ced_auc_fr(pe, x_max, thr);
    report["x_max"] = x_max;
    report["threshold"] = thr;
    report["model_errors"] = stats(e, c);
    report["pca"] = stats(pe, pc);
    report["pca"]["k"] = pca.k();
    write_ced_csv(sibling(a.out, "_ced.csv"), {{"model", c}, {"pca", pc}});
  } else if (a.task == "translate") {
    if (!d.paired()) throw DataError(a.data + ": translation needs paired inputs");
    const double x_max = a.x_max.value_or(0.1), thr = a.threshold.value_or(x_max);
    int label = 0;
    if (labels && !a.label.empty()) label = label_index(d.label_names, a.label);
    std::vector<UVMap> in_maps;
    for (std::size_t i : test_idx) in_maps.push_back(d.inputs[i]);
    const std::vector<Mesh> gt = meshes_of(d.targets, test_idx);
    const std::vector<Mesh> inputs = meshes_of(d.inputs, test_idx);
    const std::vector<Mesh> pred =
        identity ? inputs : maps_to_meshes(run_network(*g, in_maps, label, label_count), d.layout, d.templ);
    std::vector<double> err(gt.size()), base(gt.size());
    parallel_for(gt.size(), worker_count(), [&](std::size_t i) {
      const Mesh gmm = unnormalize(gt[i], d.scale);
      err[i] = rmse3d_translation(unnormalize(pred[i], d.scale), gmm);
      base[i] = rmse3d_translation(unnormalize(inputs[i], d.scale), gmm);
    });
    const ErrorDistribution e = make_distribution(err), b = make_distribution(base);
    const CedCurve c = ced_auc_fr(e, x_max, thr), bc = ced_auc_fr(b, x_max, thr);
    report["x_max"] = x_max;
    report["threshold"] = thr;
    report["model_errors"] = stats(e, c);
    report["identity_baseline"] = stats(b, bc);
    write_ced_csv(sibling(a.out, "_ced.csv"), {{"model", c}, {"identity", bc}});
  } else if (a.task == "specificity") {
    if (identity) throw DataError("specificity needs a generative model");
    std::vector<Mesh> test_mm;
    for (const Mesh& m : meshes_of(d.targets, test_idx)) test_mm.push_back(unnormalize(m, d.scale));
    const auto gs = gaussians_for(*g, d, a.gaussian);
    const LatentGaussian& lg = pick_gaussian(gs, *g, d, a.label);
    std::mt19937_64 rng(a.seed);
    std::vector<Eigen::VectorXd> zs;
    for (int i = 0; i < a.n; ++i) zs.push_back(sample_latent(lg, rng));
    std::vector<Mesh> gen(zs.size());
    parallel_for(zs.size(), worker_count(), [&](std::size_t i) {
      gen[i] = unnormalize(generate_face(*g, zs[i], d.layout, d.templ).mesh, d.scale);
    });
    const Specificity s = specificity(gen, test_mm);
    std::vector<Mesh> train_mm;
    for (const Mesh& m : meshes_of(d.targets, train_idx)) train_mm.push_back(unnormalize(m, d.scale));
    const PCAModel pca = pca_fit_k(train_mm, a.pca_k);
    std::mt19937_64 prng(a.seed);
    std::vector<Mesh> pgen;
    for (int i = 0; i < a.n; ++i) pgen.push_back(pca_sample(pca, prng));
    const Specificity ps = specificity(pgen, test_mm);
    report["samples"] = a.n;
    report["model_specificity"] = {{"mean", s.mean}, {"std", s.std}};
    report["pca_specificity"] = {{"mean", ps.mean}, {"std", ps.std}, {"k", pca.k()}};
  } else {
    throw DataError("unknown task '" + a.task + "' (represent, translate, specificity)");
  }
  write_text(a.out, report.dump(2) + "\n");
  std::cout << report.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3DFaceGAN: UV-map face modelling, generation and translation"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic face dataset");
  synth->add_option("--subjects", sa.o.subjects)->check(CLI::PositiveNumber);
  synth->add_option("--modes", sa.o.modes);
  synth->add_option("--noise", sa.o.noise, "noise std (mm) of the paired noisy scans");
  synth->add_option("--labels", sa.o.labels, "number of labels including neutral");
  synth->add_option("--seed", sa.o.seed);
  synth->add_option("--grid", sa.o.grid);
  synth->add_option("--mode-scale", sa.o.mode_scale);
  synth->add_option("--expression-scale", sa.o.expression_scale);
  synth->add_option("--out", sa.out)->required();

  PreprocessArgs pa;
  auto* prep = app.add_subcommand("preprocess", "align, normalize and rasterize meshes into UV maps");
  prep->add_option("--in", pa.in)->required();
  prep->add_option("--template", pa.templ);
  prep->add_option("--landmarks", pa.landmarks);
  prep->add_option("--res", pa.res);
  prep->add_option("--out", pa.out)->required();
  prep->add_flag("--register", pa.reg, "register raw scans to the template first");
  prep->add_option("--train-fraction", pa.train_fraction);
  prep->add_option("--seed", pa.seed, "split seed");
  prep->add_option("--scale", pa.scale, "fixed normalization scale");

  TrainArgs pre;
  auto* pretrain = app.add_subcommand("pretrain", "pre-train the autoencoder discriminator");
  pretrain->add_option("--data", pre.data)->required();
  pretrain->add_option("--config", pre.config);
  pretrain->add_option("--out", pre.out)->required();
  pretrain->add_option("--resume", pre.resume);
  pretrain->add_option("--seed", pre.seed);
  pretrain->add_flag("--labels", pre.labels);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "adversarial training from a pre-trained discriminator");
  train->add_option("--data", tr.data)->required();
  train->add_option("--pretrained", tr.pretrained);
  train->add_option("--config", tr.config);
  train->add_option("--out", tr.out)->required();
  train->add_option("--resume", tr.resume);
  train->add_option("--task", tr.task, "represent or translate");
  train->add_option("--seed", tr.seed);
  train->add_flag("--labels", tr.labels);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "sample new faces from the latent Gaussian");
  gen->add_option("--model", ga.model)->required();
  gen->add_option("--gaussian", ga.gaussian);
  gen->add_option("--n", ga.n)->check(CLI::PositiveNumber);
  gen->add_option("--label", ga.label);
  gen->add_option("--out", ga.out)->required();
  gen->add_option("--seed", ga.seed);
  gen->add_option("--data", ga.data);

  TranslateArgs ta;
  auto* trans = app.add_subcommand("translate", "run a trained generator on meshes");
  trans->add_option("--model", ta.model)->required();
  trans->add_option("--in", ta.in)->required();
  trans->add_option("--out", ta.out)->required();
  trans->add_option("--label", ta.label);
  trans->add_option("--data", ta.data);

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "metrics against the test split");
  eval->add_option("--task", ea.task)->required();
  eval->add_option("--model", ea.model)->required();
  eval->add_option("--data", ea.data);
  eval->add_option("--out", ea.out)->required();
  eval->add_option("--gaussian", ea.gaussian);
  eval->add_option("--label", ea.label);
  eval->add_option("--pca-k", ea.pca_k);
  eval->add_option("--n", ea.n)->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.seed);
  eval->add_option("--x-max", ea.x_max);
  eval->add_option("--threshold", ea.threshold);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*prep) return run_preprocess(pa);
    if (*pretrain) return run_pretrain(pre);
    if (*train) {
      if (tr.pretrained.empty() && tr.resume.empty()) {
        std::cerr << "train: --pretrained or --resume is required" << std::endl;
        return kUsage;
      }
      return run_train(tr);
    }
    if (*gen) return run_generate(ga);
    if (*trans) return run_translate(ta);
    if (*eval) return run_evaluate(ea);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << std::endl;
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kData;
  }
  return kUsage;
}
