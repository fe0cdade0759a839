#include "pydt/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "pydt/data_io.hpp"
#include "pydt/density.hpp"
#include "pydt/em.hpp"
#include "pydt/errors.hpp"
#include "pydt/generative.hpp"
#include "pydt/mcmc.hpp"
#include "pydt/predictive.hpp"
#include "pydt/tree_io.hpp"

namespace pydt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 1;
};

struct SampleOpts {
  int n = 0;
  int d = 1;
  double c = 1.0, sigma2 = 1.0, alpha = 0.0, beta = 0.0;
  bool trace = false;
  int trace_steps = 20;
  std::string out;
};

struct FitOpts {
  std::string data;
  std::string mode = "em";
  std::string likelihood = "gaussian";
  double c = 1.0, sigma2 = 1.0, alpha = 0.5, beta = 0.1;
  int k_best = 10, max_iters = 100, stall = 50, restarts = 1;
  bool ddt = false;
  int iters = 100, burn_in = 0, thin = 1, chains = 1;
  std::string out;
};

struct PredictOpts {
  std::string model, query, out;
  bool grid = false;
  double xmin = -3, xmax = 3, ymin = -3, ymax = 3;
  int steps = 50;
  int n_time_samples = 3;
  bool bound_weighted = false;
  double c = 1.0, sigma2 = 1.0, alpha = 0.0, beta = 0.0;
};

struct ExportOpts {
  std::string tree, out;
  std::string format = "newick";
  int index = 0;
  double alpha = 0.0, beta = 0.0;
};

Rng seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

/// Writes run artifacts and records their hashes for the manifest.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create " + dir_.string() + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path p = dir_ / name;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << content;
    if (!f) throw DataError("write failed: " + p.string());
    hashes_[name] = fnv1a_hex(content);
  }

  void manifest(const std::string& command, const GlobalOpts& g, json config, json scores, double seconds,
                const std::string& name = "manifest.json") {
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["seed"] = g.seed;
    m["threads"] = g.threads;
    m["config"] = std::move(config);
    m["outputs"] = hashes_;
    m["scores"] = std::move(scores);
    m["wall_clock_seconds"] = seconds;
    const fs::path p = dir_ / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << dump_json(m);
  }

 private:
  fs::path dir_;
  json hashes_ = json::object();
};

/// Runs jobs 0..n-1 on up to `threads` workers; rethrows the first failure.
void parallel_for(int n, int threads, const std::function<void(int)>& job) {
  const int workers = std::clamp(threads, 1, std::max(n, 1));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<std::string> column_names(int dim) {
  std::vector<std::string> h;
  for (int d = 0; d < dim; ++d) h.push_back("x" + std::to_string(d));
  return h;
}

std::string csv_text(const Eigen::MatrixXd& m, const std::vector<std::string>& header) {
  std::ostringstream s;
  write_csv(s, m, header);
  return s.str();
}

Tree with_leaf_locations(Tree tree, const Eigen::MatrixXd& values) {
  for (int i = 0; i < tree.num_leaves(); ++i) tree.at(tree.leaf(i)).location = values.row(i).transpose();
  return tree;
}

Eigen::MatrixXd leaf_locations(const Tree& tree) {
  Eigen::MatrixXd x(tree.num_leaves(), tree.dim());
  for (int i = 0; i < tree.num_leaves(); ++i) {
    const Node& n = tree.at(tree.leaf(i));
    if (!n.location) throw DataError("model tree has no location for leaf " + std::to_string(i));
    x.row(i) = n.location->transpose();
  }
  return x;
}

// Brownian bridge samples along every edge, for path plots.
std::string trace_csv(const Tree& tree, double sigma2, int steps, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const std::vector<NodeId> order = tree.preorder();
  std::vector<int> new_id(static_cast<std::size_t>(tree.capacity()), -1);
  for (std::size_t i = 0; i < order.size(); ++i) new_id[static_cast<std::size_t>(order[i].value)] = static_cast<int>(i);
  std::ostringstream s;
  s << "node,t";
  for (int d = 0; d < tree.dim(); ++d) s << ",x" << d;
  s << '\n';
  for (NodeId v : order) {
    const Node& n = tree.at(v);
    if (n.is_root()) continue;
    const Node& p = tree.at(n.parent);
    Eigen::VectorXd x = *p.location;
    double t = p.time;
    for (int k = 0; k <= steps; ++k) {
      if (k > 0) {
        const double t_next = k == steps ? n.time : p.time + (n.time - p.time) * k / steps;
        if (k == steps) {
          x = *n.location;
        } else {
          const double f = (t_next - t) / (n.time - t);
          const double sd = std::sqrt(sigma2 * (t_next - t) * (n.time - t_next) / (n.time - t));
          for (int d = 0; d < tree.dim(); ++d) x[d] += f * ((*n.location)[d] - x[d]) + sd * z(rng);
        }
        t = t_next;
      }
      s << new_id[static_cast<std::size_t>(v.value)] << ',' << format_double(t);
      for (int d = 0; d < tree.dim(); ++d) s << ',' << format_double(x[d]);
      s << '\n';
    }
  }
  return s.str();
}

int cmd_sample(const SampleOpts& o, const GlobalOpts& g, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.n < 1) throw std::invalid_argument("sample: --n must be >= 1");
  if (o.d < 1) throw std::invalid_argument("sample: --d must be >= 1");
  if (o.trace_steps < 1) throw std::invalid_argument("sample: --trace-steps must be >= 1");
  const Hyperparams h = Hyperparams::make(o.c, o.sigma2, o.alpha, o.beta);
  Rng rng = seeded(g.seed, 0);
  const Tree tree = sample_tree(o.n, o.d, h, rng, true);

  Outputs files(o.out);
  files.write("tree.json", dump_json(tree_to_json(tree)));
  files.write("data.csv", csv_text(leaf_data(tree), column_names(o.d)));
  files.write("tree.nwk", to_newick(tree) + "\n");
  if (o.trace) files.write("trace.csv", trace_csv(tree, h.sigma2, o.trace_steps, rng));
  const json config = {{"n", o.n}, {"d", o.d}, {"c", o.c}, {"sigma2", o.sigma2}, {"alpha", o.alpha},
                       {"beta", o.beta}, {"trace", o.trace}, {"trace_steps", o.trace_steps}};
  const json scores = {{"log_joint", log_joint(tree, h)}, {"internal_nodes", tree.internal_nodes().size()}};
  files.manifest("sample", g, config, scores, seconds_since(start));
  out << "sampled " << o.n << " points into " << o.out << "\n";
  return kExitOk;
}

json q_to_json(const QHyper& q) {
  return {{"c", {{"shape", q.c.shape}, {"rate", q.c.rate}}},
          {"precision", {{"shape", q.precision.shape}, {"rate", q.precision.rate}}},
          {"alpha", q.alpha},
          {"beta", q.beta}};
}

json fit_config(const FitOpts& o) {
  return {{"data", o.data},       {"mode", o.mode},         {"likelihood", o.likelihood}, {"c", o.c},
          {"sigma2", o.sigma2},   {"alpha", o.alpha},       {"beta", o.beta},             {"k_best", o.k_best},
          {"max_iters", o.max_iters}, {"stall", o.stall},   {"ddt", o.ddt},               {"restarts", o.restarts},
          {"iters", o.iters},     {"burn_in", o.burn_in},   {"thin", o.thin},             {"chains", o.chains}};
}

int fit_em(const FitOpts& o, const GlobalOpts& g, const Dataset& data, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.restarts < 1) throw std::invalid_argument("fit: --restarts must be >= 1");
  SearchConfig sc;
  sc.k_best = o.k_best;
  sc.max_iters = o.max_iters;
  sc.stall = o.stall;
  sc.ddt = o.ddt;
  sc.init = Hyperparams::make(o.c, o.sigma2, o.alpha, o.beta);
  sc.validate();

  std::vector<SearchResult> runs(static_cast<std::size_t>(o.restarts));
  parallel_for(o.restarts, g.threads, [&](int r) {
    Rng rng = seeded(g.seed, static_cast<std::uint64_t>(r));
    runs[static_cast<std::size_t>(r)] = greedy_search(data, sc, rng);
  });

  // Merge restarts: best bound per structure, then the top K.
  std::vector<SearchEntry> all;
  for (auto& r : runs)
    for (auto& e : r.kbest) all.push_back(std::move(e));
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.bound > b.bound; });
  std::vector<SearchEntry> kbest;
  std::set<std::uint64_t> seen;
  for (auto& e : all) {
    if (static_cast<int>(kbest.size()) >= o.k_best) break;
    if (seen.insert(structure_hash(e.tree)).second) kbest.push_back(std::move(e));
  }

  json entries = json::array();
  for (std::size_t i = 0; i < kbest.size(); ++i) {
    const SearchEntry& e = kbest[i];
    json rec = {{"rank", i},
                {"bound", e.bound},
                {"flagged", e.flagged},
                {"hyper", hyper_to_json(e.q.point())},
                {"q", q_to_json(e.q)},
                {"tree", tree_to_json(with_leaf_locations(e.tree, data.values))}};
    if (e.sites) rec["leaf_potentials"] = {{"mean", matrix_to_json(e.sites->mean)}, {"var", matrix_to_json(e.sites->var)}};
    entries.push_back(std::move(rec));
  }
  const json model = {{"kind", "kbest"},
                      {"likelihood", to_string(data.likelihood)},
                      {"dim", data.dim()},
                      {"n", data.rows()},
                      {"header", data.header},
                      {"entries", entries}};
  std::string log;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (const auto& l : runs[r].log) {
      log += json{{"restart", r}, {"move", l.move_id}, {"detached_node", l.detached_node},
                  {"candidates", l.n_candidates}, {"best_bound", l.best_bound}}
                 .dump() +
             "\n";
    }
  }
  Outputs files(o.out);
  files.write("kbest.json", dump_json(model));
  files.write("search_log.ndjson", log);
  const json scores = {{"best_bound", kbest.front().bound}, {"entries", kbest.size()}};
  files.manifest("fit", g, fit_config(o), scores, seconds_since(start));
  out << "em: " << kbest.size() << " trees, best bound " << kbest.front().bound << "\n";
  return kExitOk;
}

int fit_mcmc(const FitOpts& o, const GlobalOpts& g, const Dataset& data, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.chains < 1) throw std::invalid_argument("fit: --chains must be >= 1");
  McmcConfig mc;
  mc.iterations = o.iters;
  mc.burn_in = o.burn_in;
  mc.thin = o.thin;
  mc.validate();
  const Hyperparams h = Hyperparams::make(o.c, o.sigma2, o.alpha, o.beta);

  std::vector<McmcResult> runs(static_cast<std::size_t>(o.chains));
  parallel_for(o.chains, g.threads, [&](int k) {
    Rng rng = seeded(g.seed, static_cast<std::uint64_t>(k));
    runs[static_cast<std::size_t>(k)] = run_mcmc(init_chain(data, h, rng), mc, rng);
  });

  Outputs files(o.out);
  std::string log;
  json chains = json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const McmcResult& r = runs[k];
    for (const SampleRecord& s : r.samples) {
      std::ostringstream name;
      name << "trees/chain" << k << "_iter" << std::setw(6) << std::setfill('0') << s.iteration << ".json";
      files.write(name.str(), dump_json(tree_to_json(with_leaf_locations(s.tree, s.leaf_values))));
      log += json{{"chain", k},           {"iteration", s.iteration},   {"log_ml", s.log_ml},
                  {"c", s.hyper.c},       {"sigma2", s.hyper.sigma2},   {"alpha", s.hyper.alpha},
                  {"beta", s.hyper.beta}, {"tree_json_ref", name.str()}}
                 .dump() +
             "\n";
    }
    chains.push_back({{"chain", k},
                      {"samples", r.samples.size()},
                      {"acceptance_rate", r.acceptance_rate},
                      {"moves_proposed", r.final_state.moves_proposed},
                      {"moves_accepted", r.final_state.moves_accepted},
                      {"reattach_failures", r.final_state.reattach_failures},
                      {"max_cache_error", r.max_cache_error},
                      {"final_log_ml", r.final_state.log_ml}});
  }
  if (!log.empty()) files.write("samples.ndjson", log);
  files.manifest("fit", g, fit_config(o), {{"chains", chains}}, seconds_since(start));
  std::size_t total = 0;
  for (const auto& r : runs) total += r.samples.size();
  out << "mcmc: " << total << " samples from " << runs.size() << " chain(s)\n";
  return kExitOk;
}

int cmd_fit(const FitOpts& o, const GlobalOpts& g, std::ostream& out) {
  const Likelihood lik = parse_likelihood(o.likelihood);
  if (o.mode != "em" && o.mode != "mcmc") throw std::invalid_argument("fit: --mode must be em or mcmc");
  const Dataset data = read_csv(o.data, lik);
  return o.mode == "em" ? fit_em(o, g, data, out) : fit_mcmc(o, g, data, out);
}

struct ModelMember {
  Tree tree;
  Hyperparams hyper;
  LeafPotentials leaves;
  double log_weight = 0.0;
};

LeafPotentials potentials_of(const json& entry, const Tree& tree) {
  if (entry.contains("leaf_potentials")) {
    const json& lp = entry.at("leaf_potentials");
    LeafPotentials p;
    p.mean = matrix_from_json(lp.at("mean"));
    p.var = matrix_from_json(lp.at("var"));
    p.log_z = Eigen::MatrixXd::Zero(p.mean.rows(), p.mean.cols());
    if (p.mean.rows() != tree.num_leaves() || p.var.rows() != p.mean.rows())
      throw DataError("model: leaf potentials do not match the tree");
    return p;
  }
  return LeafPotentials::observed(leaf_locations(tree));
}

std::vector<ModelMember> load_model(const PredictOpts& o) {
  const fs::path path(o.model);
  const std::string text = read_file(path);
  std::vector<ModelMember> members;
  try {
    if (path.extension() == ".ndjson") {
      std::istringstream lines(text);
      std::string line;
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        const json rec = parse_json(line, o.model);
        Tree t = tree_from_json(parse_json(read_file(path.parent_path() / rec.at("tree_json_ref").get<std::string>()),
                                           "tree"));
        Hyperparams h = Hyperparams::make(rec.at("c").get<double>(), rec.at("sigma2").get<double>(),
                                          rec.at("alpha").get<double>(), rec.at("beta").get<double>());
        LeafPotentials lp = LeafPotentials::observed(leaf_locations(t));
        members.push_back({std::move(t), h, std::move(lp), 0.0});
      }
    } else {
      const json j = parse_json(text, o.model);
      if (j.contains("entries")) {
        for (const json& e : j.at("entries")) {
          Tree t = tree_from_json(e.at("tree"));
          LeafPotentials lp = potentials_of(e, t);
          members.push_back({std::move(t), hyper_from_json(e.at("hyper")), std::move(lp), e.at("bound").get<double>()});
        }
      } else {
        Tree t = tree_from_json(j);
        LeafPotentials lp = LeafPotentials::observed(leaf_locations(t));
        members.push_back({std::move(t), Hyperparams::make(o.c, o.sigma2, o.alpha, o.beta), std::move(lp), 0.0});
      }
    }
  } catch (const json::exception& e) {
    throw DataError(o.model + ": " + e.what());
  }
  if (members.empty()) throw DataError(o.model + ": no trees in model");
  return members;
}

int cmd_predict(const PredictOpts& o, const GlobalOpts& g, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.n_time_samples < 1) throw std::invalid_argument("predict: --n-time-samples must be >= 1");
  if (o.grid && o.steps < 2) throw std::invalid_argument("predict: --steps must be >= 2");
  if (!o.grid && o.query.empty()) throw std::invalid_argument("predict: --query is required unless --grid is set");
  const std::vector<ModelMember> members = load_model(o);
  const int dim = members.front().tree.dim();
  std::vector<MixtureDensity> ens;
  std::vector<double> log_w;
  Rng rng = seeded(g.seed, 0);
  for (const auto& m : members) {
    if (m.tree.dim() != dim) throw DataError("model: trees have different dimensions");
    ens.push_back(predictive_mixture(m.tree, m.hyper, m.leaves, o.n_time_samples, rng));
    log_w.push_back(m.log_weight);
  }
  const std::span<const double> weights = o.bound_weighted ? std::span<const double>(log_w) : std::span<const double>();

  std::ostringstream s;
  if (o.grid) {
    if (dim != 2) throw DataError("predict: grid mode needs 2-dimensional data, model has " + std::to_string(dim));
    s << "x,y,density\n";
    Eigen::VectorXd x(2);
    for (int i = 0; i < o.steps; ++i) {
      for (int k = 0; k < o.steps; ++k) {
        x << o.xmin + (o.xmax - o.xmin) * i / (o.steps - 1), o.ymin + (o.ymax - o.ymin) * k / (o.steps - 1);
        s << format_double(x[0]) << ',' << format_double(x[1]) << ','
          << format_double(std::exp(log_predictive_density(ens, x, weights))) << '\n';
      }
    }
  } else {
    const Dataset q = read_csv(o.query);
    if (q.dim() != dim)
      throw DataError("predict: query has " + std::to_string(q.dim()) + " columns, model has " + std::to_string(dim));
    s << "row,log_density\n";
    for (int i = 0; i < q.rows(); ++i) {
      if (!q.values.row(i).allFinite()) throw DataError("predict: query row " + std::to_string(i) + " has missing cells");
      const double ld = log_predictive_density(ens, q.values.row(i).transpose(), weights);
      if (!std::isfinite(ld)) throw NumericalError("predict: non-finite log density at row " + std::to_string(i));
      s << i << ',' << format_double(ld) << '\n';
    }
  }
  const json config = {{"model", o.model},   {"query", o.query},   {"grid", o.grid},
                       {"xmin", o.xmin},     {"xmax", o.xmax},     {"ymin", o.ymin},
                       {"ymax", o.ymax},     {"steps", o.steps},   {"n_time_samples", o.n_time_samples},
                       {"bound_weighted", o.bound_weighted}};
  if (o.out.empty()) {
    out << s.str();
  } else {
    const fs::path p(o.out);
    Outputs files(p.parent_path().empty() ? fs::path(".") : p.parent_path());
    files.write(p.filename().string(), s.str());
    files.manifest("predict", g, config, {{"members", members.size()}}, seconds_since(start),
                   p.filename().string() + ".manifest.json");
  }
  return kExitOk;
}

int cmd_export(const ExportOpts& o, const GlobalOpts& g, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.format != "newick" && o.format != "dendrogram" && o.format != "json")
    throw std::invalid_argument("export: --format must be newick, dendrogram or json");
  const json j = parse_json(read_file(o.tree), o.tree);
  Tree tree;
  Hyperparams h = Hyperparams::make(1.0, 1.0, o.alpha, o.beta);
  std::vector<std::string> labels;
  try {
    if (j.contains("entries")) {
      const json& entries = j.at("entries");
      if (o.index < 0 || o.index >= static_cast<int>(entries.size()))
        throw DataError("export: --index out of range (model has " + std::to_string(entries.size()) + " entries)");
      const json& e = entries.at(static_cast<std::size_t>(o.index));
      tree = tree_from_json(e.at("tree"));
      h = hyper_from_json(e.at("hyper"));
    } else {
      tree = tree_from_json(j);
    }
  } catch (const json::exception& e) {
    throw DataError(o.tree + ": " + e.what());
  }
  std::string text;
  if (o.format == "json") text = dump_json(tree_to_json(tree));
  if (o.format == "newick") text = to_newick(tree) + "\n";
  if (o.format == "dendrogram") text = dump_json({{"hyper", hyper_to_json(h)}, {"nodes", dendrogram_json(tree, h)}});
  if (o.out.empty()) {
    out << text;
  } else {
    const fs::path p(o.out);
    Outputs files(p.parent_path().empty() ? fs::path(".") : p.parent_path());
    files.write(p.filename().string(), text);
    const json config = {{"tree", o.tree}, {"format", o.format}, {"index", o.index}};
    files.manifest("export", g, config, json::object(), seconds_since(start), p.filename().string() + ".manifest.json");
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pitman-Yor diffusion tree: sampling, fitting and prediction", "pydt"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for independent chains or restarts")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  SampleOpts so;
  CLI::App* sample = app.add_subcommand("sample", "Draw a tree and data from the generative process");
  sample->fallthrough();
  sample->add_option("--n", so.n, "Number of data points")->required();
  sample->add_option("--d", so.d, "Dimension")->capture_default_str();
  sample->add_option("--c", so.c, "Divergence smoothness c")->capture_default_str();
  sample->add_option("--sigma2", so.sigma2, "Diffusion variance")->capture_default_str();
  sample->add_option("--alpha", so.alpha, "Concentration alpha")->capture_default_str();
  sample->add_option("--beta", so.beta, "Discount beta")->capture_default_str();
  sample->add_flag("--trace", so.trace, "Also write Brownian paths along every edge");
  sample->add_option("--trace-steps", so.trace_steps, "Points per edge in the trace")->capture_default_str();
  sample->add_option("--out", so.out, "Output directory")->required();

  FitOpts fo;
  CLI::App* fit = app.add_subcommand("fit", "Fit a tree to data by greedy EM search or MCMC");
  fit->fallthrough();
  fit->add_option("--data", fo.data, "Data CSV (one row per point)")->required();
  fit->add_option("--mode", fo.mode, "em or mcmc")->capture_default_str();
  fit->add_option("--likelihood", fo.likelihood, "gaussian or probit")->capture_default_str();
  fit->add_option("--c", fo.c, "Initial c")->capture_default_str();
  fit->add_option("--sigma2", fo.sigma2, "Initial sigma2 (EM replaces it by the data variance)")->capture_default_str();
  fit->add_option("--alpha", fo.alpha, "Initial alpha")->capture_default_str();
  fit->add_option("--beta", fo.beta, "Initial beta")->capture_default_str();
  fit->add_option("--k-best", fo.k_best, "EM: trees kept")->capture_default_str();
  fit->add_option("--max-iters", fo.max_iters, "EM: subtree moves per restart")->capture_default_str();
  fit->add_option("--stall", fo.stall, "EM: stop after this many moves without change")->capture_default_str();
  fit->add_option("--restarts", fo.restarts, "EM: independent searches, merged")->capture_default_str();
  fit->add_flag("--ddt", fo.ddt, "EM: constrain alpha = beta = 0 (binary trees)");
  fit->add_option("--iters", fo.iters, "MCMC: sweeps per chain")->capture_default_str();
  fit->add_option("--burn-in", fo.burn_in, "MCMC: sweeps discarded")->capture_default_str();
  fit->add_option("--thin", fo.thin, "MCMC: keep every k-th sweep")->capture_default_str();
  fit->add_option("--chains", fo.chains, "MCMC: independent chains")->capture_default_str();
  fit->add_option("--out", fo.out, "Output directory")->required();

  PredictOpts po;
  CLI::App* predict = app.add_subcommand("predict", "Predictive log-density of query rows or over a grid");
  predict->fallthrough();
  predict->add_option("--model", po.model, "kbest.json, samples.ndjson or a tree JSON")->required();
  predict->add_option("--query", po.query, "Query CSV");
  predict->add_option("--out", po.out, "Output CSV (default: stdout)");
  predict->add_flag("--grid", po.grid, "Evaluate the density on a 2-D grid");
  predict->add_option("--xmin", po.xmin)->capture_default_str();
  predict->add_option("--xmax", po.xmax)->capture_default_str();
  predict->add_option("--ymin", po.ymin)->capture_default_str();
  predict->add_option("--ymax", po.ymax)->capture_default_str();
  predict->add_option("--steps", po.steps, "Grid points per axis")->capture_default_str();
  predict->add_option("--n-time-samples", po.n_time_samples, "Divergence-time draws per edge")->capture_default_str();
  predict->add_flag("--bound-weighted", po.bound_weighted, "Weight K-best trees by exp(bound)");
  predict->add_option("--c", po.c, "c for a bare tree model")->capture_default_str();
  predict->add_option("--sigma2", po.sigma2, "sigma2 for a bare tree model")->capture_default_str();
  predict->add_option("--alpha", po.alpha, "alpha for a bare tree model")->capture_default_str();
  predict->add_option("--beta", po.beta, "beta for a bare tree model")->capture_default_str();

  ExportOpts eo;
  CLI::App* exp = app.add_subcommand("export", "Convert a tree to Newick, dendrogram JSON or canonical JSON");
  exp->fallthrough();
  exp->add_option("--tree", eo.tree, "Tree JSON or kbest.json")->required();
  exp->add_option("--index", eo.index, "Entry of a kbest.json")->capture_default_str();
  exp->add_option("--format", eo.format, "newick, dendrogram or json")->capture_default_str();
  exp->add_option("--out", eo.out, "Output file (default: stdout)");
  exp->add_option("--alpha", eo.alpha, "alpha for the dendrogram of a bare tree")->capture_default_str();
  exp->add_option("--beta", eo.beta, "beta for the dendrogram of a bare tree")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sample->parsed()) return cmd_sample(so, g, out);
    if (fit->parsed()) return cmd_fit(fo, g, out);
    if (predict->parsed()) return cmd_predict(po, g, out);
    if (exp->parsed()) return cmd_export(eo, g, out);
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace pydt
