// crowdkernel command-line front end.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "crowdkernel/eval.hpp"
#include "crowdkernel/io.hpp"
#include "crowdkernel/online.hpp"
#include "crowdkernel/server.hpp"
#include "crowdkernel/study.hpp"

namespace fs = std::filesystem;
using namespace crowdkernel;
using io::json;

namespace {

struct SimulationConfig {
  double mu_star = 0.05;
  /// Analytic two-worker agreement to calibrate to; <= 0 means reliable workers.
  double agreement = 0.65;
  std::size_t workers = 5;
};

struct Settings {
  StudyConfig study;
  SyntheticSpec synthetic;
  SimulationConfig simulation;
  CurveConfig curve;
};

void apply_config(Settings& s, const json& j) {
  io::detail::check_keys(j, {"study", "synthetic", "simulation", "curve"}, "config");
  if (j.contains("study")) io::update_from_json(s.study, j["study"]);
  if (j.contains("synthetic")) io::update_from_json(s.synthetic, j["synthetic"]);
  if (j.contains("simulation")) {
    const auto& m = j["simulation"];
    io::detail::check_keys(m, {"mu_star", "agreement", "workers"}, "simulation");
    io::detail::read(m, "mu_star", s.simulation.mu_star);
    io::detail::read(m, "agreement", s.simulation.agreement);
    io::detail::read(m, "workers", s.simulation.workers);
  }
  if (j.contains("curve")) {
    const auto& c = j["curve"];
    io::detail::check_keys(c, {"budgets", "seeds", "questions", "games_per_target"}, "curve");
    io::detail::read(c, "budgets", s.curve.budgets);
    io::detail::read(c, "seeds", s.curve.seeds);
    io::detail::read(c, "questions", s.curve.questions);
    io::detail::read(c, "games_per_target", s.curve.games_per_target);
  }
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void require_dir(const std::string& dir) {
  if (dir.empty()) throw CLI::ValidationError("--data-dir", "is required for this command");
}

void export_study(const Study& study, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto& p = study.pipeline();
  io::write_file(path_in(out_dir, "responses.jsonl"), io::responses_jsonl(p.responses()));
  if (const auto& fit = p.current_fit()) {
    io::write_file(path_in(out_dir, "embedding.csv"), io::matrix_csv(fit->embedding.coords()));
    io::write_file(path_in(out_dir, "kernel.csv"), io::matrix_csv(fit->kernel.entries()));
    io::write_file(path_in(out_dir, "pca.csv"), io::pca_csv(pca_2d(fit->kernel)));
  }
}

json fit_summary(const FitResult& fit, const FitConfig& cfg, std::size_t responses) {
  return {{"loss", fit.loss},
          {"restart", fit.restart},
          {"responses", responses},
          {"epochs_run", fit.trajectory.size()},
          {"warnings", fit.warnings},
          {"config", io::to_json(cfg)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn a similarity kernel from triplet comparisons."};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all");

  std::optional<std::uint64_t> seed;
  std::string config_path, data_dir;
  app.add_option("--seed", seed, "Base random seed");
  app.add_option("--config", config_path, "JSON configuration document")->check(CLI::ExistingFile);
  app.add_option("--data-dir", data_dir, "Study directory");

  Settings s;
  auto load_settings = [&] {
    if (!config_path.empty()) apply_config(s, json::parse(io::read_file(config_path)));
    if (seed) {
      s.study.pipeline.seed = *seed;
      s.synthetic.seed = derive_seed(*seed, {0x7ee5u});
    }
  };

  // init
  auto* init = app.add_subcommand("init", "Register objects from a manifest CSV (id,image_url,label)");
  std::string manifest, gold_file;
  init->add_option("--manifest", manifest, "Object manifest")->required()->check(CLI::ExistingFile);
  init->add_option("--gold", gold_file, "Gold triples as JSON lines {head,left,right,choice}")
      ->check(CLI::ExistingFile);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run the acquisition pipeline against a simulated crowd");
  std::optional<std::size_t> sim_n, sim_leaves, sim_dims, sim_workers, sim_rounds, sim_seed_triples;
  std::optional<std::string> sim_kind, sim_acq;
  std::optional<double> sim_agreement;
  simulate->add_option("--kind", sim_kind, "tree | ball | clusters");
  simulate->add_option("--n", sim_n, "Number of objects");
  simulate->add_option("--leaves", sim_leaves, "Tree leaves or cluster count");
  simulate->add_option("--dims", sim_dims, "Ground-truth dimension (ball, clusters)");
  simulate->add_option("--agreement", sim_agreement, "Target two-worker agreement (<= 0: reliable workers)");
  simulate->add_option("--workers", sim_workers, "Simulated workers");
  simulate->add_option("--rounds", sim_rounds, "Adaptive rounds T");
  simulate->add_option("--seed-triples", sim_seed_triples, "Random triples per object R");
  simulate->add_option("--acquisition", sim_acq, "adaptive | random");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit an embedding to a response log");
  std::string responses_file, fit_out;
  std::optional<std::size_t> fit_n;
  std::optional<std::string> fit_mode;
  bool verify = false;
  fit->add_option("--responses", responses_file, "Responses JSON lines (default: the study log)")
      ->check(CLI::ExistingFile);
  fit->add_option("--n", fit_n, "Object count (default: study size or 1 + max id)");
  fit->add_option("--mode", fit_mode, "batch | projected | online");
  fit->add_option("--out", fit_out, "Output directory for embedding.csv, kernel.csv, fit.json");
  fit->add_flag("--verify-replay", verify, "Refit every stored fit of the study and compare losses");

  // select
  auto* select = app.add_subcommand("select", "Most informative query for one head under the current fit");
  ObjectId select_head = 0;
  std::size_t select_k = 2;
  select->add_option("--head", select_head, "Head object id")->required();
  select->add_option("--k", select_k, "Tuple size (2 = pair)");

  // eval20q
  auto* eval20q = app.add_subcommand("eval20q", "20 Questions on the current fit against the ground truth");
  std::string q_mode = "adaptive";
  int questions = 20;
  bool noiseless = false;
  eval20q->add_option("--mode", q_mode, "adaptive | random");
  eval20q->add_option("--questions", questions, "Questions per game");
  eval20q->add_flag("--noiseless", noiseless, "Answer with the closer member instead of the simulated crowd");

  // curve
  auto* curve = app.add_subcommand("curve", "Adaptive-vs-random acquisition curves on synthetic data");
  std::string curve_out, curve_svg_path;
  std::vector<std::size_t> budgets;
  std::vector<std::uint64_t> seeds;
  curve->add_option("--budgets", budgets, "Triples per object at which to evaluate")->delimiter(',');
  curve->add_option("--seeds", seeds, "Seeds to average over")->delimiter(',');
  curve->add_option("--out", curve_out, "CSV output (default stdout)");
  curve->add_option("--svg", curve_svg_path, "Also render an SVG line chart");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the study over HTTP");
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--static", static_dir, "Directory of web UI files to serve at /");

  // export
  auto* exp = app.add_subcommand("export", "Write responses.jsonl, embedding.csv, kernel.csv and pca.csv");
  std::string export_out;
  exp->add_option("--out", export_out, "Output directory (default: the data dir)");

  // project
  auto* project = app.add_subcommand("project", "Project a kernel CSV onto unit-diagonal PSD matrices");
  std::string kernel_in, kernel_out;
  double tol = 1e-8;
  int max_iter = 500;
  project->add_option("--kernel", kernel_in, "Input n x n CSV")->required()->check(CLI::ExistingFile);
  project->add_option("--out", kernel_out, "Output CSV (default stdout)");
  project->add_option("--tol", tol, "Convergence tolerance");
  project->add_option("--max-iter", max_iter, "Iteration cap");

  CLI11_PARSE(app, argc, argv);

  try {
    load_settings();

    if (*init) {
      require_dir(data_dir);
      auto objects = io::parse_manifest(io::read_file(manifest));
      std::vector<GoldTriple> gold;
      if (!gold_file.empty()) gold = io::parse_gold_jsonl(io::read_file(gold_file));
      Study study(std::move(objects), s.study, data_dir, std::move(gold));
      std::cout << study.status().dump(1) << "\n";
      return 0;
    }

    if (*simulate) {
      require_dir(data_dir);
      if (sim_kind) s.synthetic.kind = synthetic_kind_from_string(*sim_kind);
      if (sim_n) s.synthetic.n = *sim_n;
      if (sim_leaves) s.synthetic.leaves = *sim_leaves;
      if (sim_dims) s.synthetic.dims = *sim_dims;
      if (sim_agreement) s.simulation.agreement = *sim_agreement;
      if (sim_workers) s.simulation.workers = *sim_workers;
      if (sim_rounds) s.study.pipeline.rounds = *sim_rounds;
      if (sim_seed_triples) s.study.pipeline.seed_triples = *sim_seed_triples;
      if (sim_acq) s.study.pipeline.acquisition = acquisition_from_string(*sim_acq);
      const SyntheticData data = generate(s.synthetic);
      SimCrowd crowd(data.truth, s.simulation.mu_star, uniform_workers(s.simulation.workers, 1.0),
                     derive_seed(s.study.pipeline.seed, {0xc40du}));
      if (s.simulation.agreement > 0.0) crowd.set_reliability(calibrate_reliability(crowd, s.simulation.agreement));
      const double reliability = crowd.workers().front().reliability;
      const double achieved = analytic_agreement(crowd, reliability, 4000, 7);
      if (s.simulation.agreement > 0.0 && achieved < s.simulation.agreement - 0.005)
        std::cerr << "crowdkernel: warning: agreement " << achieved << " is below the target "
                  << s.simulation.agreement << " even with reliable workers\n";
      auto objects = anonymous_objects(data.truth.size());
      for (auto& o : objects) o.label = "group-" + std::to_string(data.group[o.id]);
      Study study(std::move(objects), s.study, data_dir);
      io::write_file(path_in(data_dir, "truth.csv"), io::matrix_csv(data.truth.coords()));
      io::write_file(path_in(data_dir, "simulation.json"),
                     json{{"synthetic", io::to_json(s.synthetic)},
                          {"simulation",
                           {{"mu_star", s.simulation.mu_star},
                            {"agreement", s.simulation.agreement},
                            {"workers", s.simulation.workers},
                            {"reliability", reliability},
                            {"achieved_agreement", achieved}}}}
                             .dump(1) + "\n");
      SimOracle oracle(crowd);
      study.simulate(oracle);
      export_study(study, data_dir);
      std::cout << study.status().dump(1) << "\n";
      return 0;
    }

    if (*fit) {
      if (verify) {
        require_dir(data_dir);
        const Study study = Study::load(data_dir);
        const double worst = verify_replay(study);
        std::cout << json{{"fits", study.pipeline().fits().size()}, {"max_abs_diff", worst}}.dump() << "\n";
        return worst <= 1e-10 ? 0 : 3;
      }
      std::vector<TripleResponse> rs;
      std::size_t n = 0;
      FitConfig fc = s.study.pipeline.fit;
      if (!responses_file.empty()) {
        rs = io::parse_responses_jsonl(io::read_file(responses_file));
        for (const auto& r : rs) n = std::max({n, r.triple.head + 1, r.triple.left + 1, r.triple.right + 1});
      } else {
        require_dir(data_dir);
        const Study study = Study::load(data_dir);
        rs = study.pipeline().responses();
        n = study.size();
        fc = study.config().pipeline.fit;
      }
      if (fit_n) n = *fit_n;
      if (seed) fc.seed = *seed;
      if (fit_mode) fc.mode = fit_mode_from_string(*fit_mode);
      FitResult res = [&] {
        switch (fc.mode) {
          case FitMode::ProjectedK: return fit_projected_kernel(rs, n, fc);
          case FitMode::OnlineK: return fit_online(rs, n, fc).fit;
          case FitMode::BatchM: break;
        }
        return fit_batch(rs, n, fc);
      }();
      const json summary = fit_summary(res, fc, rs.size());
      if (!fit_out.empty()) {
        fs::create_directories(fit_out);
        io::write_file(path_in(fit_out, "embedding.csv"), io::matrix_csv(res.embedding.coords()));
        io::write_file(path_in(fit_out, "kernel.csv"), io::matrix_csv(res.kernel.entries()));
        io::write_file(path_in(fit_out, "fit.json"), summary.dump(1) + "\n");
      }
      std::cout << summary.dump(1) << "\n";
      return 0;
    }

    if (*select) {
      require_dir(data_dir);
      const Study study = Study::load(data_dir);
      const auto& f = study.pipeline().current_fit();
      if (!f) throw ArgumentError("the study has no fit yet");
      if (select_head >= study.size()) throw ArgumentError("--head out of range");
      const auto& cfg = study.config().pipeline;
      const auto mine = study.pipeline().responses_for(select_head);
      const Posterior pos = posterior(select_head, mine, f->embedding, cfg.fit.model());
      const std::uint64_t sel_seed = seed ? *seed : derive_seed(cfg.seed, {0x5e1u, select_head});
      const CandidateQuery q = select_k == 2
                                   ? select_pair(pos, f->embedding, cfg.fit.model(), cfg.sample_size, sel_seed)
                                   : select_tuple(pos, f->embedding, cfg.fit.model(), select_k, cfg.sample_size, sel_seed);
      std::cout << json{{"head", select_head}, {"members", q.members}, {"expected_gain", q.expected_gain}}.dump()
                << "\n";
      return 0;
    }

    if (*eval20q) {
      require_dir(data_dir);
      const Study study = Study::load(data_dir);
      const auto& f = study.pipeline().current_fit();
      if (!f) throw ArgumentError("the study has no fit yet");
      const Embedding truth(io::parse_matrix_csv(io::read_file(path_in(data_dir, "truth.csv"))));
      const auto& cfg = study.config().pipeline;
      std::vector<ObjectId> targets(study.size());
      for (ObjectId i = 0; i < targets.size(); ++i) targets[i] = i;
      const std::uint64_t base = seed ? *seed : cfg.seed;
      SimCrowd crowd(truth, s.simulation.mu_star, uniform_workers(s.simulation.workers, 1.0),
                     derive_seed(base, {0xe7a1u}));
      if (s.simulation.agreement > 0.0) crowd.set_reliability(calibrate_reliability(crowd, s.simulation.agreement));
      const TargetOracle oracle = noiseless ? noiseless_target_oracle(truth) : crowd_target_oracle(crowd);
      const auto res = twenty_questions(f->embedding, cfg.fit.model(), oracle, targets,
                                        question_mode_from_string(q_mode), questions, cfg.sample_size,
                                        derive_seed(base, {0x20u}));
      std::cout << json{{"mode", to_string(res.mode)},
                        {"questions", res.questions},
                        {"mean_log2_rank", res.mean_log2_rank},
                        {"uniform_baseline", uniform_log2_rank(study.size())},
                        {"ranks", res.ranks}}
                       .dump()
                << "\n";
      return 0;
    }

    if (*curve) {
      CurveConfig cc = s.curve;
      cc.synthetic = s.synthetic;
      cc.mu_star = s.simulation.mu_star;
      cc.target_agreement = s.simulation.agreement;
      cc.workers = s.simulation.workers;
      cc.pipeline = s.study.pipeline;
      if (!budgets.empty()) cc.budgets = budgets;
      if (!seeds.empty()) cc.seeds = seeds;
      const auto points = acquisition_curve(cc);
      const std::string csv = curve_csv(points);
      if (curve_out.empty())
        std::cout << csv;
      else
        io::write_file(curve_out, csv);
      if (!curve_svg_path.empty()) io::write_file(curve_svg_path, curve_svg(points));
      return 0;
    }

    if (*serve) {
      require_dir(data_dir);
      Study study = Study::load(data_dir);
      StudyServer server(study, utc_today, static_dir);
      std::cerr << "crowdkernel: serving " << data_dir << " on http://" << host << ":" << port << "\n";
      if (!server.listen(host, port)) {
        std::cerr << "crowdkernel: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
      return 0;
    }

    if (*exp) {
      require_dir(data_dir);
      export_study(Study::load(data_dir), export_out.empty() ? data_dir : export_out);
      return 0;
    }

    if (*project) {
      const KernelMatrix k(io::parse_matrix_csv(io::read_file(kernel_in)));
      const ProjectionResult pr = project_B(k, tol, max_iter);
      const std::string csv = io::matrix_csv(pr.matrix.entries());
      if (kernel_out.empty())
        std::cout << csv;
      else
        io::write_file(kernel_out, csv);
      std::cerr << "crowdkernel: " << (pr.converged ? "converged" : "did not converge") << " after "
                << pr.iterations << " iterations\n";
      return pr.converged ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "crowdkernel: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
