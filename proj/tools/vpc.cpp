// Experiment runner: dataset generation, model construction and training,
// certified partition-function reports, density grids, tessellation overlays.
// Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 IO failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vpc/builders.hpp"
#include "vpc/certified.hpp"
#include "vpc/circuit.hpp"
#include "vpc/data.hpp"
#include "vpc/hfv.hpp"
#include "vpc/serialize.hpp"
#include "vpc/train.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kOutputEnv = "VPC_OUTPUT_ROOT";

Json default_config() {
  Json cfg;
  cfg["dataset"] = {{"name", "pinwheel"}, {"seed", 0},
                    {"train", 10000},     {"val", 5000},
                    {"test", 5000}};
  cfg["model"] = {{"kind", "vt"}, {"k", 5}, {"units", 0}, {"vtree", "random"}, {"seed", 0}};
  cfg["train"] = {{"learning_rate", 0.01}, {"batch_size", 500}, {"epochs", 100},
                  {"seed", 0},             {"alpha_start", 1.0}, {"alpha_end", 50.0},
                  {"snapshot_stride", 10}};
  cfg["certify"] = {{"epsilon", 1e-3}, {"max_iters", 10000}, {"padding", 0.5}};
  cfg["grid"] = {{"resolution", 100}};
  return cfg;
}

void merge_into(Json& base, const Json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

// `--set a.b=value`; the value is parsed as JSON when possible, else kept
// as a string.
void apply_set(Json& cfg, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw vpc::ConfigError("--set expects key=value, got '" + kv + "'");
  std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
  Json* cur = &cfg;
  std::size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw vpc::ConfigError("--set: empty key segment in '" + kv + "'");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*cur)[part] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    cur = &(*cur)[part];
    pos = dot + 1;
  }
}

Json load_config(const std::string& path, const std::vector<std::string>& sets) {
  Json cfg = default_config();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw vpc::IoError("cannot open config file: " + path);
    Json user;
    try {
      is >> user;
    } catch (const Json::exception& e) {
      throw vpc::ConfigError(std::string("cannot parse config file: ") + e.what());
    }
    merge_into(cfg, user);
  }
  for (const auto& kv : sets) apply_set(cfg, kv);
  return cfg;
}

std::string resolve_output(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputEnv)) return std::string(env) + "/" + command;
  return "out/" + command;
}

class Manifest {
 public:
  Manifest(std::string dir, const Json& cfg) : dir_(std::move(dir)) {
    doc_["config_hash"] = [&] {
      char buf[20];
      std::snprintf(buf, sizeof(buf), "%016zx", std::hash<std::string>{}(cfg.dump()));
      return std::string(buf);
    }();
    doc_["version"] = kVersion;
    doc_["artifacts"] = Json::array();
    doc_["wall_times_seconds"] = Json::object();
  }

  void add(const std::string& name) { doc_["artifacts"].push_back(name); }

  void phase(const std::string& name, double seconds) {
    doc_["wall_times_seconds"][name] = seconds;
  }

  void write() {
    add("manifest.json");
    std::ofstream os(dir_ + "/manifest.json");
    if (!os) throw vpc::IoError("cannot write manifest in " + dir_);
    os << doc_.dump(2) << '\n';
  }

 private:
  std::string dir_;
  Json doc_;
};

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw vpc::IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_json(const std::string& path, const Json& doc) {
  std::ofstream os(path);
  if (!os) throw vpc::IoError("cannot open for writing: " + path);
  os << doc.dump(2) << '\n';
  if (!os) throw vpc::IoError("write failure: " + path);
}

const vpc::VTSumNode* find_vt_node(const vpc::Circuit& c) {
  for (const auto& n : c.nodes)
    if (const auto* vt = std::get_if<vpc::VTSumNode>(&n)) return vt;
  return nullptr;
}

// Fallback domain when no data file is supplied: leaf supports (mean +/- 4
// stddev) and gating centroids, padded.
vpc::Box model_domain(const vpc::Circuit& c, double padding) {
  vpc::Box b(std::vector<double>(c.num_vars, vpc::kInf),
             std::vector<double>(c.num_vars, vpc::kNegInf));
  auto grow = [&](std::size_t j, double lo, double hi) {
    b.lo[j] = std::min(b.lo[j], lo);
    b.hi[j] = std::max(b.hi[j], hi);
  };
  for (const auto& n : c.nodes) {
    if (const auto* g = std::get_if<vpc::GaussianLeaf>(&n))
      grow(g->var, g->mean - 4.0 * g->stddev(), g->mean + 4.0 * g->stddev());
    else if (const auto* vt = std::get_if<vpc::VTSumNode>(&n))
      for (std::size_t k = 0; k < vt->centroids.size(); ++k)
        for (std::size_t j = 0; j < vt->scope.size(); ++j)
          grow(vt->scope[j], vt->centroids[k][j], vt->centroids[k][j]);
  }
  for (std::size_t v = 0; v < c.var_centroids.size(); ++v)
    for (double x : c.var_centroids[v]) grow(v, x, x);
  for (std::size_t j = 0; j < b.lo.size(); ++j) {
    if (!(b.lo[j] <= b.hi[j])) throw vpc::ConfigError("cannot derive a domain from the model");
    b.lo[j] -= padding;
    b.hi[j] += padding;
  }
  return b;
}

vpc::Box pick_domain(const vpc::Circuit& c, const std::string& data_path, double padding) {
  if (!data_path.empty()) return vpc::data_domain(vpc::read_points_csv(data_path), padding);
  return model_domain(c, padding);
}

// Sutherland-Hodgman clip of a convex polygon by a half-space a.x <= b.
std::vector<std::array<double, 2>> clip_polygon(std::vector<std::array<double, 2>> poly,
                                                const vpc::HalfSpace& h) {
  std::vector<std::array<double, 2>> out;
  const std::size_t n = poly.size();
  auto side = [&](const std::array<double, 2>& p) {
    return h.normal[0] * p[0] + h.normal[1] * p[1] - h.offset;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    double sa = side(a), sb = side(b);
    if (sa <= 0.0) out.push_back(a);
    if ((sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0)) {
      double t = sa / (sa - sb);
      out.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
    }
  }
  return out;
}

// --- subcommand bodies --------------------------------------------------

int cmd_generate(const Json& cfg, const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  const std::string name = cfg["dataset"]["name"].get<std::string>();
  const std::uint64_t seed = cfg["dataset"]["seed"].get<std::uint64_t>();
  vpc::SplitSpec spec;
  spec.train = cfg["dataset"]["train"].get<std::size_t>();
  spec.val = cfg["dataset"]["val"].get<std::size_t>();
  spec.test = cfg["dataset"]["test"].get<std::size_t>();
  vpc::Points raw = vpc::generate(name, spec.total(), seed);
  vpc::SplitDatasets splits = vpc::standardize_and_split(raw, spec, seed, name);
  vpc::write_points_csv(outdir + "/train.csv", splits.train.points);
  vpc::write_points_csv(outdir + "/val.csv", splits.val.points);
  vpc::write_points_csv(outdir + "/test.csv", splits.test.points);
  vpc::write_dataset_metadata(outdir + "/metadata.json", name, seed, spec,
                              splits.train.standardization);
  for (const char* f : {"train.csv", "val.csv", "test.csv", "metadata.json"}) man.add(f);
  man.phase("generate", t.seconds());
  man.write();
  std::cout << "wrote " << name << " dataset to " << outdir << "\n";
  return 0;
}

int cmd_train(const Json& cfg, const std::string& data_dir, const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  vpc::Points train_pts = vpc::read_points_csv(data_dir + "/train.csv");
  vpc::Points val_pts = vpc::read_points_csv(data_dir + "/val.csv");
  if (train_pts.empty()) throw vpc::ArgumentError("train: empty training file");
  const auto dim = static_cast<std::uint32_t>(train_pts[0].size());

  const std::string kind = cfg["model"]["kind"].get<std::string>();
  const auto k = cfg["model"]["k"].get<std::size_t>();
  std::size_t units = cfg["model"]["units"].get<std::size_t>();
  if (units == 0) units = vpc::default_units(dim);
  const std::string vtree = cfg["model"]["vtree"].get<std::string>();
  if (vtree != "random" && vtree != "left-linear")
    throw vpc::ConfigError("model.vtree must be 'random' or 'left-linear'");
  vpc::VtreeKind vk =
      vtree == "left-linear" ? vpc::VtreeKind::LeftLinear : vpc::VtreeKind::RandomBinary;
  const auto mseed = cfg["model"]["seed"].get<std::uint64_t>();

  vpc::Circuit model;
  if (kind == "baseline")
    model = vpc::build_baseline(dim, units, vk, mseed);
  else if (kind == "vt")
    model = vpc::build_vt_model(train_pts, k, units, vk, mseed);
  else if (kind == "hfv")
    model = vpc::build_hfv_model(train_pts, k, vk, mseed);
  else
    throw vpc::ConfigError("model.kind must be baseline, vt, or hfv");
  man.phase("build", t.seconds());

  vpc::TrainConfig tc;
  tc.learning_rate = cfg["train"]["learning_rate"].get<double>();
  tc.batch_size = cfg["train"]["batch_size"].get<std::size_t>();
  tc.epochs = cfg["train"]["epochs"].get<int>();
  tc.seed = cfg["train"]["seed"].get<std::uint64_t>();
  tc.gate.alpha_start = cfg["train"]["alpha_start"].get<double>();
  tc.gate.alpha_end = cfg["train"]["alpha_end"].get<double>();
  tc.snapshot_stride = cfg["train"]["snapshot_stride"].get<int>();
  tc.refine.epsilon = cfg["certify"]["epsilon"].get<double>();
  tc.refine.max_iters = 500;
  tc.domain_padding = cfg["certify"]["padding"].get<double>();

  Timer tt;
  vpc::TrainResult res = vpc::train(std::move(model), train_pts, val_pts, tc);
  man.phase("train", tt.seconds());

  vpc::save_circuit(outdir + "/model.json", res.circuit);
  {
    std::ofstream os(outdir + "/trace.csv");
    if (!os) throw vpc::IoError("cannot write trace.csv in " + outdir);
    vpc::write_train_trace(os, res.trace);
  }
  write_json(outdir + "/report.json",
             Json{{"best_epoch", res.best_epoch}, {"aborted", res.aborted}});
  for (const char* f : {"model.json", "trace.csv", "report.json"}) man.add(f);
  man.write();
  if (res.aborted) {
    std::cerr << "training aborted on numeric failure; last good snapshot retained\n";
    return 2;
  }
  std::cout << "trained " << kind << " model, best epoch " << res.best_epoch << "\n";
  return 0;
}

int cmd_certify(const Json& cfg, const std::string& model_path, const std::string& data_path,
                const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  vpc::Circuit c = vpc::load_circuit(model_path);
  const double epsilon = cfg["certify"]["epsilon"].get<double>();
  const int max_iters = cfg["certify"]["max_iters"].get<int>();
  const double padding = cfg["certify"]["padding"].get<double>();

  Json report;
  std::vector<vpc::RefineRow> trace;
  if (find_vt_node(c) == nullptr) {
    // no Voronoi gates: the normalizer is exact
    double z = vpc::is_hfv_circuit(c) && !c.var_centroids.empty()
                   ? std::exp(vpc::hfv_log_partition(c))
                   : 1.0;
    report = {{"z_lo", z}, {"z_hi", z}, {"gap", 0.0}, {"iters", 0}, {"converged", true}};
    trace.push_back({0, z, z, 0.0, 0, 0});
  } else {
    vpc::Box domain = pick_domain(c, data_path, padding);
    vpc::RefineOptions opt;
    opt.epsilon = epsilon;
    opt.max_iters = max_iters;
    vpc::CertifiedResult res = vpc::refine(c, domain, opt);
    report = {{"z_lo", res.bounds.lo},
              {"z_hi", res.bounds.hi},
              {"gap", res.bounds.hi - res.bounds.lo},
              {"iters", res.trace.empty() ? 0 : res.trace.back().iter + 1},
              {"converged", res.converged}};
    trace = std::move(res.trace);
  }
  write_json(outdir + "/report.json", report);
  {
    std::ofstream os(outdir + "/trace.csv");
    if (!os) throw vpc::IoError("cannot write trace.csv in " + outdir);
    vpc::write_refine_trace(os, trace);
  }
  man.add("report.json");
  man.add("trace.csv");
  man.phase("certify", t.seconds());
  man.write();
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_eval(const Json& cfg, const std::string& model_path, const std::string& data_path,
             double alpha, const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  vpc::Circuit c = vpc::load_circuit(model_path);
  vpc::Points pts = vpc::read_points_csv(data_path);
  if (pts.empty()) throw vpc::ArgumentError("eval: empty data file");
  double hard = 0.0;
  for (const auto& x : pts) hard += vpc::eval_log_density(c, x, vpc::EvalMode::Hard());
  hard /= static_cast<double>(pts.size());
  Json report = {{"count", pts.size()}, {"mean_log_density_hard", hard}};
  if (alpha > 0.0) {
    double soft = 0.0;
    for (const auto& x : pts) soft += vpc::eval_log_density(c, x, vpc::EvalMode::Soft(alpha));
    report["alpha"] = alpha;
    report["mean_log_density_soft"] = soft / static_cast<double>(pts.size());
  }
  write_json(outdir + "/report.json", report);
  man.add("report.json");
  man.phase("eval", t.seconds());
  man.write();
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_export_grid(const Json& cfg, const std::string& model_path, const std::string& data_path,
                    double alpha, const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  vpc::Circuit c = vpc::load_circuit(model_path);
  if (c.num_vars != 2) throw vpc::ArgumentError("export-grid supports d = 2 models only");
  const int res = cfg["grid"]["resolution"].get<int>();
  if (res <= 0) throw vpc::ConfigError("grid.resolution must be positive");
  vpc::Box domain = pick_domain(c, data_path, cfg["certify"]["padding"].get<double>());
  vpc::EvalMode mode = alpha > 0.0 ? vpc::EvalMode::Soft(alpha) : vpc::EvalMode::Hard();

  std::ofstream os(outdir + "/grid.csv");
  if (!os) throw vpc::IoError("cannot write grid.csv in " + outdir);
  os << "x1,x2,log_density\n" << std::setprecision(17);
  for (int i = 0; i < res; ++i) {
    double x1 = domain.lo[0] + (i + 0.5) * (domain.hi[0] - domain.lo[0]) / res;
    for (int j = 0; j < res; ++j) {
      double x2 = domain.lo[1] + (j + 0.5) * (domain.hi[1] - domain.lo[1]) / res;
      std::vector<double> p = {x1, x2};
      os << x1 << ',' << x2 << ',' << vpc::eval_log_density(c, p, mode) << '\n';
    }
  }
  if (!os) throw vpc::IoError("write failure: grid.csv");
  man.add("grid.csv");
  man.phase("export-grid", t.seconds());
  man.write();
  std::cout << "wrote " << res * res << " grid rows to " << outdir << "/grid.csv\n";
  return 0;
}

int cmd_export_tessellation(const Json& cfg, const std::string& model_path,
                            const std::string& data_path, const std::string& outdir) {
  ensure_dir(outdir);
  Manifest man(outdir, cfg);
  Timer t;
  vpc::Circuit c = vpc::load_circuit(model_path);
  if (c.num_vars != 2) throw vpc::ArgumentError("export-tessellation supports d = 2 models only");
  const vpc::VTSumNode* vt = find_vt_node(c);
  if (vt == nullptr)
    throw vpc::ArgumentError("export-tessellation: model has no Voronoi-gated node");
  vpc::Box domain = pick_domain(c, data_path, cfg["certify"]["padding"].get<double>());
  vpc::Tessellation tess(vt->centroids);

  Json doc;
  doc["domain"] = {{"lo", domain.lo}, {"hi", domain.hi}};
  doc["centroids"] = vt->centroids;
  Json cells = Json::array();
  for (int k = 0; k < tess.num_cells(); ++k) {
    Json cell;
    cell["index"] = k;
    std::vector<std::array<double, 2>> poly = {{domain.lo[0], domain.lo[1]},
                                               {domain.hi[0], domain.lo[1]},
                                               {domain.hi[0], domain.hi[1]},
                                               {domain.lo[0], domain.hi[1]}};
    for (const auto& h : vpc::cell_halfspaces(tess, k)) poly = clip_polygon(poly, h);
    Json jp = Json::array();
    for (const auto& p : poly) jp.push_back({p[0], p[1]});
    cell["polygon"] = std::move(jp);
    vpc::Box ib = vpc::inner_box(tess, k, domain);
    vpc::Box ob = vpc::outer_box(tess, k, domain);
    cell["inner_box"] = {{"lo", ib.lo}, {"hi", ib.hi}};
    cell["outer_box"] = {{"lo", ob.lo}, {"hi", ob.hi}};
    cells.push_back(std::move(cell));
  }
  doc["cells"] = std::move(cells);
  write_json(outdir + "/tessellation.json", doc);
  man.add("tessellation.json");
  man.phase("export-tessellation", t.seconds());
  man.write();
  std::cout << "wrote tessellation overlay to " << outdir << "/tessellation.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voronoi-gated probabilistic circuits"};
  app.require_subcommand(1);
  app.fallthrough();  // accept global options after the subcommand name
  std::string config_path, output, data_path, model_path;
  std::vector<std::string> sets;
  double alpha = 0.0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", sets, "override config entries as key.path=value");
  app.add_option("--output", output, "output directory (default: $" + std::string(kOutputEnv) +
                                         "/<command> or out/<command>)");

  auto* gen = app.add_subcommand("generate", "sample, standardize, and split a dataset");
  gen->add_option("--dataset", [&sets](const std::vector<std::string>& v) {
       sets.push_back("dataset.name=" + v[0]);
       return true;
     }, "dataset name shortcut");
  gen->add_option("--seed", [&sets](const std::vector<std::string>& v) {
       sets.push_back("dataset.seed=" + v[0]);
       return true;
     }, "dataset seed shortcut");

  auto* trn = app.add_subcommand("train", "build and train a model on generated data");
  trn->add_option("--data", data_path, "directory holding train.csv/val.csv")->required();

  auto* cert = app.add_subcommand("certify", "certified partition-function bounds");
  cert->add_option("--model", model_path, "model file")->required();
  cert->add_option("--data", data_path, "data CSV used to derive the domain");

  auto* ev = app.add_subcommand("eval", "mean log-density of a model on a data file");
  ev->add_option("--model", model_path, "model file")->required();
  ev->add_option("--data", data_path, "data CSV")->required();
  ev->add_option("--alpha", alpha, "also report soft-gated values at this temperature");

  auto* grid = app.add_subcommand("export-grid", "2D log-density grid CSV");
  grid->add_option("--model", model_path, "model file")->required();
  grid->add_option("--data", data_path, "data CSV used to derive the domain");
  grid->add_option("--alpha", alpha, "soft-gated grid at this temperature (default hard)");

  auto* tes = app.add_subcommand("export-tessellation", "cell polygons and bounding boxes");
  tes->add_option("--model", model_path, "model file")->required();
  tes->add_option("--data", data_path, "data CSV used to derive the domain");

  try {
    app.parse(argc, argv);
    Json cfg = load_config(config_path, sets);
    if (gen->parsed()) return cmd_generate(cfg, resolve_output(output, "generate"));
    if (trn->parsed()) return cmd_train(cfg, data_path, resolve_output(output, "train"));
    if (cert->parsed())
      return cmd_certify(cfg, model_path, data_path, resolve_output(output, "certify"));
    if (ev->parsed())
      return cmd_eval(cfg, model_path, data_path, alpha, resolve_output(output, "eval"));
    if (grid->parsed())
      return cmd_export_grid(cfg, model_path, data_path, alpha,
                             resolve_output(output, "export-grid"));
    if (tes->parsed())
      return cmd_export_tessellation(cfg, model_path, data_path,
                                     resolve_output(output, "export-tessellation"));
    return 1;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const vpc::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const vpc::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const vpc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
