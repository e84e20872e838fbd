#include "promptkit/cli.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "promptkit/alignment.hpp"
#include "promptkit/fusion.hpp"
#include "promptkit/gradcheck.hpp"
#include "promptkit/order_align.hpp"

namespace promptkit::cli {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr double kDefaultSoftTauScale = 1000.0;
constexpr std::size_t kDefaultTrials = 100;

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json report_json(const VerificationReport& r) {
  Json j;
  j["input_a"] = r.input_a;
  j["input_b"] = r.input_b;
  j["matched"] = r.matched;
  j["gated"] = r.gated;
  j["retained"] = r.retained;
  j["retention_rate"] = r.retention_rate;
  j["mean_similarity_before"] = r.mean_similarity_before;
  j["mean_similarity_after"] = r.mean_similarity_after;
  return j;
}

Json histogram_json(const SimilarityHistogram& h) {
  Json j;
  j["lo"] = h.lo;
  j["hi"] = h.hi;
  j["counts"] = h.counts;
  return j;
}

int cmd_tau(const fs::path& a_path, const fs::path& b_path, double scale, std::ostream& out) {
  const auto a = read_scores(a_path);
  const auto b = read_scores(b_path);
  const TauResult t = kendall_tau(a, b);
  Json j;
  j["tau"] = t.tau;
  j["concordant"] = t.concordant;
  j["discordant"] = t.discordant;
  j["n"] = t.n;
  try {
    j["soft_tau"] = soft_tau_convergence(a, b, scale);
  } catch (const std::invalid_argument&) {
    j["soft_tau"] = nullptr;  // undefined with ties
  }
  j["scale"] = scale;
  out << j.dump() << "\n";
  return 0;
}

int cmd_select(const fs::path& scores_path, std::size_t k, double alpha, std::ostream& out) {
  const auto doc = nlohmann::json::parse(slurp(scores_path));
  const auto text = doc.at("text").get<std::vector<double>>();
  const auto visual = doc.at("visual").get<std::vector<double>>();
  Json j;
  j["k"] = k;
  j["alpha"] = alpha;
  j["indices"] = select_queries(text, visual, k, alpha);
  out << j.dump() << "\n";
  return 0;
}

int cmd_gradcheck(GradLoss loss, std::size_t n, std::uint64_t seed, double tol, double eps, std::size_t trials,
                  std::ostream& out, std::ostream& err) {
  Rng rng(seed);
  GradCheckReport worst;
  std::size_t worst_trial = 0;
  std::size_t failures = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const GradCheckReport r = gradcheck_instance(loss, n, rng, eps);
    if (r.max_rel_err >= tol) ++failures;
    if (t == 0 || r.max_rel_err > worst.max_rel_err) {
      worst_trial = t;
      worst.max_rel_err = r.max_rel_err;
      worst.worst_index = r.worst_index;
    }
    worst.max_abs_err = std::max(worst.max_abs_err, r.max_abs_err);
    worst.n_params = r.n_params;
  }
  const bool pass = failures == 0;
  Json j;
  j["loss"] = std::string(to_string(loss));
  j["n"] = n;
  j["seed"] = seed;
  j["trials"] = trials;
  j["eps"] = eps;
  j["tol"] = tol;
  j["n_params"] = worst.n_params;
  j["max_abs_err"] = worst.max_abs_err;
  j["max_rel_err"] = worst.max_rel_err;
  j["worst_trial"] = worst_trial;
  j["worst_index"] = worst.worst_index;
  j["failures"] = failures;
  j["pass"] = pass;
  out << j.dump() << "\n";
  if (!pass) err << "gradcheck: " << failures << " of " << trials << " trials exceeded tol " << tol << "\n";
  return pass ? 0 : 1;
}

Matrix random_stream(std::size_t rows, std::size_t dim, Rng& rng) {
  Matrix m(rows, dim);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

int cmd_fuse_demo(const fs::path& config_path, std::uint64_t seed, std::ostream& out) {
  const auto cfg = nlohmann::json::parse(slurp(config_path));
  const auto dim = cfg.value("dim", std::size_t{16});
  const auto d_ff = cfg.value("d_ff", 2 * dim);
  const auto n_layers = cfg.value("layers", kDefaultFusionLayers);
  const auto scale = cfg.value("scale", 0.1);
  const bool per_pathway = cfg.value("per_pathway_background", false);
  const auto n_features = cfg.value("features", std::size_t{32});
  const auto n_text = cfg.value("text", std::size_t{4});
  const auto n_visual = cfg.value("visual", std::size_t{4});
  if (dim == 0) throw std::invalid_argument("fuse-demo: dim must be positive");

  Rng rng(seed);
  FusionState state{random_stream(n_features, dim, rng), random_stream(n_text, dim, rng),
                    random_stream(n_visual, dim, rng)};
  std::vector<FusionParams> layers;
  for (std::size_t l = 0; l < n_layers; ++l) layers.push_back(FusionParams::random(dim, d_ff, rng.next_u64(), scale, per_pathway));

  Json j;
  j["dim"] = dim;
  j["layers"] = n_layers;
  j["seed"] = seed;
  j["per_pathway_background"] = per_pathway;
  j["per_layer"] = Json::array();
  FusionState cur = state;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Json lj;
    lj["layer"] = l;
    lj["pathways"] = Json::array();
    for (const auto& a : background_activation_stats(cur, layers[l])) {
      Json pj;
      pj["pathway"] = std::string(to_string(a.pathway));
      pj["active"] = a.active;
      pj["queries"] = a.queries;
      pj["mean_background"] = a.mean_background;
      pj["max_background"] = a.max_background;
      lj["pathways"].push_back(std::move(pj));
    }
    cur = fusion_layer(cur, layers[l]);
    lj["tokens"] = {{"features", cur.features.rows()}, {"text", cur.text.rows()}, {"visual", cur.visual.rows()}};
    j["per_layer"].push_back(std::move(lj));
  }
  const FusionState zero_out = fusion_layer(state, FusionParams::zeros(dim, d_ff));
  const bool shapes_kept = cur.features.rows() == n_features && cur.text.rows() == n_text && cur.visual.rows() == n_visual;
  const bool identity = zero_out.features == state.features && zero_out.text == state.text && zero_out.visual == state.visual;
  j["tokens_preserved"] = shapes_kept;
  j["zero_params_identity"] = identity;
  out << j.dump() << "\n";
  return shapes_kept && identity ? 0 : 1;
}

int cmd_sample(const fs::path& manifest_path, const std::optional<std::uint64_t>& seed_flag, std::size_t epochs,
               std::ostream& out) {
  SamplerManifest m = load_manifest(manifest_path);
  const std::uint64_t base = resolve_seed(seed_flag, m.seed);
  for (std::size_t e = 0; e < epochs; ++e) {
    m.seed = base + e;
    const auto batches = sample_batches(m);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Json j;
      j["epoch"] = e;
      j["batch"] = b;
      j["dataset"] = batches[b].dataset;
      j["ids"] = batches[b].sample_ids;
      out << j.dump() << "\n";
    }
  }
  return 0;
}

struct VerifyArgs {
  fs::path a, b, out_dir, report;
  std::optional<fs::path> emb;
  bool hash_fallback = false;
  std::size_t dim = kDefaultModelDim;
  std::size_t jobs = 1;
  std::string retention_base = "mean";
  VerifyThresholds thresholds;
};

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err) {
  VerifyThresholds th = args.thresholds;
  th.retention_base = parse_retention_base(args.retention_base);
  const EmbeddingProvider emb = args.emb ? EmbeddingProvider::from_file(*args.emb, args.hash_fallback)
                                         : EmbeddingProvider::hash_only(args.dim);

  const BatchVerifyResult res = batch_verify(args.a, args.b, emb, th, args.jobs);

  fs::create_directories(args.out_dir);
  std::vector<VerifyResult> results;
  Json images = Json::array();
  for (const auto& [id, r] : res.images) {
    std::ofstream f(args.out_dir / (safe_file_stem(id) + ".json"));
    if (!f) throw std::runtime_error("cannot write verified output for '" + id + "'");
    f << dump_annotation_set(r.verified);
    Json ij;
    ij["image_id"] = id;
    ij["report"] = report_json(r.report);
    images.push_back(std::move(ij));
    results.push_back(r);
  }
  const RetentionSummary summary = retention_stats(results, th.retention_base);

  Json j;
  j["thresholds"] = {{"iou_gate", th.iou_gate},
                     {"sim_threshold", th.sim_threshold},
                     {"retention_base", std::string(to_string(th.retention_base))}};
  j["aggregate"] = report_json(res.aggregate);
  j["similarity_histogram"] = {{"before", histogram_json(summary.before)}, {"after", histogram_json(summary.after)}};
  j["images"] = std::move(images);
  j["unpaired"] = Json::array();
  for (const auto& [id, side] : res.unpaired) j["unpaired"].push_back({{"image_id", id}, {"side", side}});
  j["errors"] = Json::array();
  for (const auto& [where, what] : res.errors) j["errors"].push_back({{"source", where}, {"message", what}});

  const std::string doc = j.dump(2) + "\n";
  std::ofstream rep(args.report);
  if (!rep) throw std::runtime_error("cannot write report " + args.report.string());
  rep << doc;
  out << doc;

  err << "verify: " << res.images.size() << " image(s), retained " << res.aggregate.retained << " of "
      << res.aggregate.matched << " matched pair(s)";
  if (!res.ok()) err << ", " << res.errors.size() << " error(s)";
  err << "\n";
  for (const auto& [where, what] : res.errors) err << "  " << where << ": " << what << "\n";
  return res.ok() ? 0 : 1;
}

}  // namespace

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  const char* env = std::getenv(kSeedEnv);
  if (env == nullptr || *env == '\0') return fallback;
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(env, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || env[used] != '\0' || env[0] == '-') {
    throw std::invalid_argument(std::string(kSeedEnv) + " is not an unsigned integer: '" + env + "'");
  }
  return v;
}

std::vector<double> read_scores(const fs::path& path) {
  std::string text = slurp(path);
  for (char& c : text)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream in(text);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw std::runtime_error(path.string() + ": not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::string safe_file_stem(const std::string& image_id) {
  std::string s = image_id;
  for (char& c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (!(std::isalnum(u) || c == '.' || c == '_' || c == '-')) c = '_';
  }
  if (s.empty() || s == "." || s == "..") s = "_" + s;
  return s;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-conditioned detection mechanisms toolkit", "promptkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  CliConfig cfg;
  std::optional<std::uint64_t> seed_flag;
  std::function<int()> action;

  // tau
  auto* tau = app.add_subcommand("tau", "Kendall tau and its tanh surrogate for two score files");
  fs::path tau_a, tau_b;
  double tau_scale = kDefaultSoftTauScale;
  tau->add_option("--a", tau_a, "First score list (comma or whitespace separated)")->required()->check(CLI::ExistingFile);
  tau->add_option("--b", tau_b, "Second score list")->required()->check(CLI::ExistingFile);
  tau->add_option("--scale", tau_scale, "Score scale for the surrogate")->capture_default_str();
  tau->callback([&] {
    cfg.paths = {tau_a, tau_b};
    action = [&] { return cmd_tau(tau_a, tau_b, tau_scale, out); };
  });

  // select
  auto* sel = app.add_subcommand("select", "Top-k query selection from text and visual scores");
  fs::path sel_scores;
  std::size_t sel_k = 0;
  double sel_alpha = 0.5;
  sel->add_option("--scores", sel_scores, "JSON file {\"text\": [...], \"visual\": [...]}")
      ->required()
      ->check(CLI::ExistingFile);
  sel->add_option("--k", sel_k, "Number of queries to keep")->required();
  sel->add_option("--alpha", sel_alpha, "Weight of the text scores")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  sel->callback([&] {
    cfg.paths = {sel_scores};
    action = [&] { return cmd_select(sel_scores, sel_k, sel_alpha, out); };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  std::string gc_loss;
  std::size_t gc_n = 16;
  double gc_eps = kDefaultFiniteDiffEps;
  std::size_t gc_trials = kDefaultTrials;
  gc->add_option("--loss", gc_loss, "order, align, giou, l1, dice or bce")
      ->required()
      ->check(CLI::IsMember({"order", "align", "giou", "l1", "dice", "bce"}));
  gc->add_option("--n", gc_n, "Instance size")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--seed", seed_flag, "RNG seed (falls back to PROMPTKIT_SEED)");
  gc->add_option("--tol", cfg.tolerance, "Maximum relative error")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--eps", gc_eps, "Finite-difference step")->capture_default_str()->check(CLI::PositiveNumber);
  gc->add_option("--trials", gc_trials, "Random instances to check")->capture_default_str()->check(CLI::PositiveNumber);
  gc->callback([&] {
    action = [&] {
      cfg.seed = resolve_seed(seed_flag);
      return cmd_gradcheck(parse_grad_loss(gc_loss), gc_n, cfg.seed, cfg.tolerance, gc_eps, gc_trials, out, err);
    };
  });

  // fuse-demo
  auto* fd = app.add_subcommand("fuse-demo", "Run seeded early-fusion layers and report background usage");
  fs::path fd_config;
  fd->add_option("--config", fd_config, "JSON config (dim, d_ff, layers, features, text, visual, scale, seed)")
      ->required()
      ->check(CLI::ExistingFile);
  fd->add_option("--seed", seed_flag, "RNG seed (overrides the config; falls back to PROMPTKIT_SEED)");
  fd->callback([&] {
    cfg.paths = {fd_config};
    action = [&] {
      const auto doc = nlohmann::json::parse(slurp(fd_config));
      cfg.seed = resolve_seed(seed_flag, doc.value("seed", std::uint64_t{0}));
      return cmd_fuse_demo(fd_config, cfg.seed, out);
    };
  });

  // sample
  auto* smp = app.add_subcommand("sample", "Emit dataset-pure batches, one JSON object per line");
  fs::path smp_manifest;
  std::size_t smp_epochs = 1;
  smp->add_option("--manifest", smp_manifest, "Sampler manifest JSON")->required()->check(CLI::ExistingFile);
  smp->add_option("--seed", seed_flag, "RNG seed (overrides the manifest; falls back to PROMPTKIT_SEED)");
  smp->add_option("--epochs", smp_epochs, "Epochs to emit")->capture_default_str()->check(CLI::PositiveNumber);
  smp->callback([&] {
    cfg.paths = {smp_manifest};
    action = [&] { return cmd_sample(smp_manifest, seed_flag, smp_epochs, out); };
  });

  // verify
  auto* ver = app.add_subcommand("verify", "Cross-verify top-down against bottom-up annotations");
  VerifyArgs va;
  fs::path emb_path;
  ver->add_option("--a", va.a, "Directory of top-down annotation JSON")->required()->check(CLI::ExistingDirectory);
  ver->add_option("--b", va.b, "Directory of bottom-up annotation JSON")->required()->check(CLI::ExistingDirectory);
  auto* emb_opt = ver->add_option("--emb", emb_path, "Tag embedding JSON {tag: [floats]}")->check(CLI::ExistingFile);
  auto* hash_opt = ver->add_flag("--hash-fallback", va.hash_fallback, "Hash unknown tags to pseudo-random unit vectors");
  ver->add_option("--dim", va.dim, "Embedding width when only hashing")->capture_default_str()->check(CLI::PositiveNumber);
  ver->add_option("--iou-gate", va.thresholds.iou_gate, "Minimum IoU of a matched pair")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  ver->add_option("--sim-thresh", va.thresholds.sim_threshold, "Minimum tag cosine similarity")
      ->capture_default_str()
      ->check(CLI::Range(-1.0, 1.0));
  ver->add_option("--out", va.out_dir, "Directory for verified annotation JSON")->required();
  ver->add_option("--report", va.report, "Path for the report JSON")->required();
  ver->add_option("--jobs", va.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  ver->add_option("--retention-base", va.retention_base, "mean, top_down or bottom_up")
      ->capture_default_str()
      ->check(CLI::IsMember({"mean", "top_down", "bottom_up"}));
  ver->callback([&] {
    if (emb_opt->count() == 0 && hash_opt->count() == 0) {
      throw CLI::ValidationError("verify", "either --emb or --hash-fallback is required");
    }
    if (emb_opt->count() > 0) va.emb = emb_path;
    cfg.paths = {va.a, va.b};
    cfg.thresholds = va.thresholds;
    action = [&] { return cmd_verify(va, out, err); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  cfg.subcommand = app.get_subcommands().front()->get_name();
  try {
    return action();
  } catch (const std::exception& e) {
    err << cfg.subcommand << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace promptkit::cli
