// Command-line front end: one subcommand per pipeline stage plus the
// ablation ladder, radius sweep and oracle runners.
//
// Exit codes: 0 ok, 2 usage, 3 I/O or malformed file, 4 validation, 5 numeric.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ans/ans.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace ans;

struct AnsFlags {
  std::optional<std::string> mode;
  std::optional<double> radius, gamma, lambda, eta;
  std::optional<std::size_t> steps, head_epochs;
};

void add_ans_flags(CLI::App* app, AnsFlags& f) {
  app->add_option("--mode", f.mode, "none|noise|project|ascend")
      ->check(CLI::IsMember({"none", "noise", "project", "ascend"}));
  app->add_option("--radius", f.radius, "inner shell radius r");
  app->add_option("--gamma", f.gamma, "outer/inner radius ratio");
  app->add_option("--lambda", f.lambda, "weight of the synthetic loss");
  app->add_option("--steps", f.steps, "gradient ascent steps k");
  app->add_option("--eta", f.eta, "ascent step size (default radius/4)");
  app->add_option("--head-epochs", f.head_epochs, "epochs per head (default min(C, 20))");
}

json read_json(const std::string& path) {
  try {
    return json::parse(data::read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("cannot parse " + path + ": " + e.what());
  }
}

// Config JSON may hold "ans"/"known"/"ovr" sections, or be a bare AnsConfig.
experiment::ExperimentConfig resolve_config(const std::string& config_path, std::uint64_t seed, const AnsFlags& f) {
  experiment::ExperimentConfig cfg;
  cfg.with_seed(seed);
  if (!config_path.empty()) {
    const json j = read_json(config_path);
    const bool bare = j.contains("mode") || j.contains("radius") || j.contains("gamma");
    if (bare) cfg.ans = sampler::ans_config_from_json(j);
    if (j.contains("ans")) cfg.ans = sampler::ans_config_from_json(j.at("ans"));
    if (j.contains("known")) cfg.known = known::train_config_from_json(j.at("known"), cfg.known);
    if (j.contains("ovr")) cfg.ovr = ovr::ovr_config_from_json(j.at("ovr"), cfg.ovr);
    cfg.known.seed = mix_seed(seed, 11);
    cfg.ovr.seed = mix_seed(seed, 13);
  }
  if (f.mode) cfg.ans.mode = sampler::mode_from_string(*f.mode);
  if (f.radius) {
    cfg.ans.radius = *f.radius;
    cfg.ans.step_size = *f.radius / 4.0;
  }
  if (f.gamma) cfg.ans.gamma = *f.gamma;
  if (f.lambda) cfg.ans.lambda = *f.lambda;
  if (f.steps) cfg.ans.ascent_steps = *f.steps;
  if (f.eta) cfg.ans.step_size = *f.eta;
  if (f.head_epochs) cfg.ovr.epochs = *f.head_epochs;
  cfg.ans.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) { data::write_atomically(path, j.dump(2) + "\n"); }

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    data::write_atomically(out, text);
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  auto s = p;
  s.replace_extension(suffix);
  return s;
}

experiment::Splits load_splits(const std::string& train, const std::string& val, const std::string& test) {
  return {data::load_embeddings(train, data::SplitTag::train), data::load_embeddings(val, data::SplitTag::val),
          data::load_embeddings(test, data::SplitTag::test)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-world classification with one-vs-rest heads and adaptive negative sampling"};
  app.require_subcommand(1);

  std::string train, val, test, config, out, known_path, model_path;
  std::uint64_t seed = 7;
  double known_ratio = 0.0;
  AnsFlags af;

  auto* gen = app.add_subcommand("gen-synth", "generate train/val/test embeddings from a Gaussian mixture");
  gen->add_option("--config", config, "SyntheticSpec JSON (default: the standard 16-d fixture)");
  gen->add_option("--seed", seed, "seed (overrides the spec's seed)");
  gen->add_option("--out", out, "output directory")->required();

  auto* split = app.add_subcommand("split", "keep a seeded subset of categories as known");
  split->add_option("--train", train)->required();
  split->add_option("--val", val)->required();
  split->add_option("--test", test)->required();
  split->add_option("--known-ratio", known_ratio)->required();
  split->add_option("--seed", seed);
  split->add_option("--out", out, "output directory")->required();

  auto* tk = app.add_subcommand("train-known", "train the C-way known-category classifier");
  tk->add_option("--train", train)->required();
  tk->add_option("--val", val)->required();
  tk->add_option("--config", config);
  tk->add_option("--seed", seed);
  tk->add_option("--out", out, "model JSON")->required();

  auto* to = app.add_subcommand("train-ovr", "train one-vs-rest heads with synthesized negatives");
  to->add_option("--train", train)->required();
  to->add_option("--val", val)->required();
  to->add_option("--known", known_path, "known-classifier JSON")->required();
  to->add_option("--config", config);
  to->add_option("--seed", seed);
  to->add_option("--out", out, "model JSON (trace goes to <stem>.trace.json)")->required();
  add_ans_flags(to, af);

  auto* ev = app.add_subcommand("eval", "evaluate a model on a test split");
  ev->add_option("--test", test)->required();
  ev->add_option("--model", model_path)->required();
  ev->add_option("--out", out, "report JSON (stdout when omitted)");

  std::vector<double> radii{0.25, 0.5, 1.0, 2.0, 4.0};
  bool relative = false;
  auto* ab = app.add_subcommand("ablate", "run the none/noise/project/ascend ladder");
  auto* sw = app.add_subcommand("sweep-radius", "sweep the shell radius against a mode=none baseline");
  for (auto* sub : {ab, sw}) {
    sub->add_option("--train", train, "train split (default: standard synthetic fixture)");
    sub->add_option("--val", val);
    sub->add_option("--test", test);
    sub->add_option("--config", config);
    sub->add_option("--seed", seed);
    sub->add_option("--out", out, "CSV path (stdout when omitted)");
    add_ans_flags(sub, af);
  }
  sw->add_option("--radii", radii, "comma-separated radii")->delimiter(',');
  sw->add_flag("--relative", relative, "radii are multiples of the mean sqrt(2 tr Sigma) bound");

  std::string which;
  std::size_t cases = 0, pairs = 100000, resolution = 0;
  auto* orc = app.add_subcommand("oracle", "run a brute-force verifier and print JSON lines");
  orc->add_option("which", which, "grad|projection|prop1")->required()->check(CLI::IsMember({"grad", "projection", "prop1"}));
  orc->add_option("--seed", seed);
  orc->add_option("--cases", cases, "number of random cases");
  orc->add_option("--pairs", pairs, "Monte Carlo pairs for prop1");
  orc->add_option("--resolution", resolution, "radial grid intervals for projection");
  orc->add_option("--out", out, "JSON-lines path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      data::SyntheticSpec spec =
          config.empty() ? experiment::standard_fixture_spec(seed) : data::synthetic_spec_from_json(read_json(config));
      if (gen->count("--seed")) spec.seed = seed;
      auto s = data::generate_synthetic(spec);
      fs::create_directories(out);
      data::save_embeddings(s.train, fs::path(out) / "train.emb");
      data::save_embeddings(s.val, fs::path(out) / "val.emb");
      data::save_embeddings(s.test, fs::path(out) / "test.emb");
      write_json(fs::path(out) / "manifest.json",
                 {{"command", "gen-synth"}, {"seed", spec.seed}, {"spec", data::to_json(spec)}});
    } else if (*split) {
      auto s = load_splits(train, val, test);
      auto r = data::make_open_world_split(s.train, s.val, s.test, known_ratio, seed);
      fs::create_directories(out);
      data::save_embeddings(r.train, fs::path(out) / "train.emb");
      data::save_embeddings(r.val, fs::path(out) / "val.emb");
      data::save_embeddings(r.test, fs::path(out) / "test.emb");
      write_json(fs::path(out) / "split.json",
                 {{"known_ratio", known_ratio},
                  {"seed", seed},
                  {"known_category_ids", r.split.known_category_ids},
                  {"known_vocab", r.train.vocab},
                  {"run_config", {{"train", train}, {"val", val}, {"test", test}}}});
    } else if (*tk) {
      auto cfg = resolve_config(config, seed, af);
      auto tr = data::load_embeddings(train, data::SplitTag::train);
      auto va = data::load_embeddings(val, data::SplitTag::val);
      auto clf = known::train_known(tr, va, cfg.known);
      auto j = known::to_json(clf);
      j["run_config"] = experiment::to_json(cfg);
      j["run_config"]["train"] = train;
      j["run_config"]["val"] = val;
      write_json(out, j);
    } else if (*to) {
      auto cfg = resolve_config(config, seed, af);
      auto tr = data::load_embeddings(train, data::SplitTag::train);
      auto va = data::load_embeddings(val, data::SplitTag::val);
      auto clf = known::known_from_json(read_json(known_path));
      auto [model, trace] = ovr::train_ovr(tr, va, clf, cfg.ans, cfg.ovr);
      json run = experiment::to_json(cfg);
      run["train"] = train;
      run["val"] = val;
      run["known"] = known_path;
      auto j = ovr::to_json(model);
      j["run_config"] = run;
      write_json(out, j);
      auto tj = ovr::to_json(trace);
      tj["run_config"] = run;
      write_json(sibling(out, ".trace.json"), tj);
    } else if (*ev) {
      auto te = data::load_embeddings(test, data::SplitTag::test);
      const json mj = read_json(model_path);
      std::vector<int> preds;
      std::size_t C = 0;
      if (mj.contains("msp")) {
        auto m = ovr::msp_from_json(mj);
        preds = ovr::predict_msp(m, te.all_rows());
        C = m.vocab.size();
      } else {
        auto m = ovr::open_world_from_json(mj);
        if (m.dim() != te.dim()) throw ValidationError("test dimension does not match model");
        preds = ovr::infer(m, te.all_rows());
        C = m.num_classes();
      }
      if (te.num_classes() != C) throw ValidationError("test vocabulary size does not match model");
      auto j = metrics::to_json(metrics::evaluate(preds, te.labels, C));
      j["run_config"] = {{"test", test}, {"model", model_path}};
      if (mj.contains("run_config")) j["run_config"]["model_run_config"] = mj.at("run_config");
      emit(out, j.dump(2) + "\n");
    } else if (*ab || *sw) {
      auto cfg = resolve_config(config, seed, af);
      experiment::Splits s;
      if (!train.empty() || !val.empty() || !test.empty()) {
        if (train.empty() || val.empty() || test.empty())
          throw ValidationError("--train, --val and --test must be given together");
        s = load_splits(train, val, test);
        cfg.dataset = fs::path(train).parent_path().filename().string();
        if (cfg.dataset.empty()) cfg.dataset = fs::path(train).stem().string();
      } else {
        s = experiment::standard_fixture(seed);
      }
      std::vector<metrics::CsvRow> rows;
      if (*ab) {
        rows = experiment::run_ablation(s, cfg);
      } else {
        auto rs = radii;
        if (relative) {
          const double bound = experiment::mean_radius_bound(s.train);
          for (auto& r : rs) r *= bound;
        }
        rows = experiment::run_radius_sweep(s, cfg, rs);
      }
      emit(out, metrics::to_csv(rows));
      if (!out.empty() && out != "-") write_json(fs::path(out + ".manifest.json"), experiment::to_json(cfg));
    } else if (*orc) {
      std::string lines;
      bool all_pass = true;
      Rng rng = make_rng(seed);
      if (which == "grad") {
        const std::size_t n = cases ? cases : 5;
        std::uniform_int_distribution<std::size_t> depth(1, 3), width(1, 32);
        for (std::size_t i = 0; i < n; ++i) {
          nn::MlpSpec spec;
          spec.dropout_rate = 0.0;
          const std::size_t layers = depth(rng);
          for (std::size_t l = 0; l <= layers; ++l) spec.layer_dims.push_back(width(rng));
          auto rep = oracles::check_gradients(spec, mix_seed(seed, i));
          auto j = oracles::to_json(rep);
          j["layer_dims"] = spec.layer_dims;
          all_pass = all_pass && rep.pass;
          lines += j.dump() + "\n";
        }
      } else if (which == "projection") {
        const std::size_t n = cases ? cases : 20;
        std::uniform_real_distribution<double> radius(1.0, 10.0), gamma(1.5, 3.0), dist(0.0, 4.0);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t d = i % 2 ? 3 : 2;
          const double r = radius(rng), g = gamma(rng);
          std::vector<double> anchor(d), dir(d), cand(d);
          for (auto& v : anchor) v = 5.0 * standard_normal(rng);
          for (auto& v : dir) v = standard_normal(rng);
          const double t = dist(rng) * r / l2_norm(dir);
          for (std::size_t j = 0; j < d; ++j) cand[j] = anchor[j] + t * dir[j];
          auto proj = sampler::project_to_shell(anchor, cand, r, g);
          const std::size_t res = resolution ? resolution : (d == 2 ? 200 : 30);
          auto rep = oracles::projection_oracle(anchor, cand, proj, r, g, res);
          rep.seed = seed;
          auto j = oracles::to_json(rep);
          j["d"] = d;
          all_pass = all_pass && rep.pass;
          lines += j.dump() + "\n";
        }
      } else {
        const std::size_t n = cases ? cases : 3;
        std::uniform_int_distribution<std::size_t> dim(1, 32);
        std::uniform_real_distribution<double> var(0.1, 10.0);
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> cov(dim(rng));
          for (auto& v : cov) v = var(rng);
          for (auto dist : {oracles::Distribution::gaussian, oracles::Distribution::uniform}) {
            auto rep = oracles::prop1_monte_carlo(cov, dist, pairs, mix_seed(seed, i));
            auto j = oracles::to_json(rep);
            j["bound"] = sampler::estimate_radius_bound(cov);
            all_pass = all_pass && rep.pass;
            lines += j.dump() + "\n";
          }
        }
      }
      emit(out, lines);
      if (!all_pass) {
        std::cerr << "error[numeric]: oracle check failed\n";
        return 5;
      }
    }
  } catch (const ans::Error& e) {
    std::cerr << "error[" << ans::to_string(e.kind()) << "]: " << e.what() << "\n";
    return ans::exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
