#include "convar/cli.hpp"

#include "convar/error.hpp"
#include "convar/geometry.hpp"
#include "convar/io.hpp"
#include "convar/mcmc.hpp"
#include "convar/predict.hpp"
#include "convar/score.hpp"
#include "convar/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <iostream>
#include <optional>
#include <set>

namespace convar {

namespace {

using json = nlohmann::json;

constexpr const char* kVersion = "1.0.0";

struct ManifestMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string config;
};

class Manifest {
 public:
  Manifest(std::string command, const Globals& g) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["version"] = kVersion;
    doc_["config_sha256"] = g.config.empty() ? sha256_hex("") : sha256_file(g.config);
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
    doc_["settings"] = json::object();
  }

  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const std::string& role, const fs::path& path) {
    doc_["inputs"][role] = {{"file", path.filename().string()}, {"sha256", sha256_file(path)}};
  }
  json& settings() { return doc_["settings"]; }

  void output(const fs::path& dir, const std::string& name, const std::string& content) {
    write_atomic(dir / name, content);
    doc_["outputs"][name] = sha256_hex(content);
  }

  void write(const fs::path& dir) {
    doc_["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_atomic(dir / "manifest.json", doc_.dump(2) + "\n");
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// Takes known keys out of a key=value map; leftover keys are errors.
class Keys {
 public:
  Keys(std::map<std::string, std::string> kv, std::string origin) : kv_(std::move(kv)), origin_(std::move(origin)) {}

  std::optional<std::string> text(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }
  std::optional<double> number(const std::string& key) {
    auto v = text(key);
    return v ? std::optional<double>(parse_double(*v, origin_ + " key " + key)) : std::nullopt;
  }
  std::optional<long> integer(const std::string& key) {
    auto v = text(key);
    return v ? std::optional<long>(parse_long(*v, origin_ + " key " + key)) : std::nullopt;
  }
  void finish() const {
    if (!kv_.empty()) throw ValidationError(origin_ + ": unknown key '" + kv_.begin()->first + "'");
  }

 private:
  std::map<std::string, std::string> kv_;
  std::string origin_;
};

Keys config_keys(const Globals& g) {
  if (g.config.empty()) return Keys({}, "config");
  return Keys(read_key_values(g.config), g.config);
}

template <typename T>
void assign(T& target, const std::optional<T>& v) {
  if (v) target = *v;
}

struct DataPaths {
  std::string dir;
  std::string stations, observations, covariates, wind;

  void add(CLI::App* cmd) {
    cmd->add_option("--data", dir, "Directory holding stations.csv, observations.csv, covariates.csv, wind.csv");
    cmd->add_option("--stations", stations, "Stations CSV (id,x,y)");
    cmd->add_option("--observations", observations, "Observations CSV (time,station,rain)");
    cmd->add_option("--covariates", covariates, "Covariates CSV (time,station,<names>)");
    cmd->add_option("--wind", wind, "Wind CSV (time,wx,wy)");
  }
  fs::path resolve(const std::string& given, const char* name) const {
    if (!given.empty()) return given;
    if (dir.empty()) throw ValidationError(std::string("no --") + name + " file and no --data directory given");
    return fs::path(dir) / (std::string(name) + ".csv");
  }
  fs::path stations_path() const { return resolve(stations, "stations"); }
  fs::path observations_path() const { return resolve(observations, "observations"); }
  fs::path covariates_path() const { return resolve(covariates, "covariates"); }
  fs::path wind_path() const { return resolve(wind, "wind"); }

  Dataset load(Manifest& m) const {
    Dataset d;
    d.stations = read_stations(stations_path());
    d.observations = read_observations(observations_path(), d.stations);
    d.covariates = read_covariates(covariates_path(), d.stations);
    d.wind = read_wind(wind_path());
    m.input("stations", stations_path());
    m.input("observations", observations_path());
    m.input("covariates", covariates_path());
    m.input("wind", wind_path());
    return d;
  }
};

// ---------------------------------------------------------------- tessellate

int cmd_tessellate(const Globals& g, const std::string& stations_path) {
  Manifest m("tessellate", g);
  const StationSet sites = read_stations(stations_path);
  m.input("stations", stations_path);
  const Tessellation tess = build_tessellation(sites);
  std::string csv = "id,x,y,area,bounded,clipped_fallback,neighbors\n";
  std::string cells = "id,vertex,x,y\n";
  for (Eigen::Index i = 0; i < sites.size(); ++i) {
    const Cell& c = tess.cells[static_cast<std::size_t>(i)];
    std::string nb;
    for (int j : c.neighbors) nb += (nb.empty() ? "" : ";") + sites[j].id;
    csv += sites[i].id + "," + format_double(sites[i].coord.x()) + "," + format_double(sites[i].coord.y()) + "," +
           format_double(c.area) + "," + (c.bounded ? "1" : "0") + "," + (c.clipped_fallback ? "1" : "0") + "," + nb +
           "\n";
    for (std::size_t k = 0; k < c.polygon.size(); ++k) {
      cells += sites[i].id + "," + std::to_string(k) + "," + format_double(c.polygon[k].x()) + "," +
               format_double(c.polygon[k].y()) + "\n";
    }
  }
  m.output(g.out, "tessellation.csv", csv);
  m.output(g.out, "cells.csv", cells);
  m.write(g.out);
  std::cout << "tessellated " << sites.size() << " sites into " << g.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ simulate

std::string params_kv(const Params& p, const std::vector<std::string>& coefficients) {
  std::string out = "parameter,value\n";
  for (const auto& [k, v] : params_to_keys(p, coefficients)) out += k + "," + format_double(v) + "\n";
  return out;
}

int cmd_simulate(const Globals& g) {
  Manifest m("simulate", g);
  Keys keys = config_keys(g);
  SynthSpec spec;
  spec.params = reference_params();
  spec.covariates = reference_covariates();
  spec.seed = g.seed.value_or(1);
  if (auto names = keys.text("covariates")) {
    spec.covariates.clear();
    std::size_t start = 0;
    while (start <= names->size()) {
      const auto semi = names->find(';', start);
      const std::string n = names->substr(start, semi - start);
      if (!n.empty()) spec.covariates.push_back(n);
      if (semi == std::string::npos) break;
      start = semi + 1;
    }
    spec.params.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.covariates.size()) + 1);
  }
  if (auto v = keys.text("model")) spec.model = parse_model_class(*v);
  if (auto v = keys.text("stations")) {
    spec.sites = read_stations(*v);
    m.input("stations", *v);
  }
  if (auto v = keys.integer("n_sites")) spec.n_sites = static_cast<int>(*v);
  assign(spec.box, keys.number("box"));
  if (auto v = keys.integer("steps")) spec.steps = *v;
  assign(spec.missing_rate, keys.number("missing_rate"));
  if (auto v = keys.text("wind.kind")) {
    if (*v == "constant") {
      spec.wind.kind = WindSpec::Kind::constant;
    } else if (*v == "ar1") {
      spec.wind.kind = WindSpec::Kind::ar1;
    } else {
      throw ValidationError("wind.kind must be constant or ar1");
    }
  }
  assign(spec.wind.mean.x(), keys.number("wind.mean_x"));
  assign(spec.wind.mean.y(), keys.number("wind.mean_y"));
  assign(spec.wind.ar, keys.number("wind.ar"));
  assign(spec.wind.sd, keys.number("wind.sd"));
  std::vector<std::string> coefficients{"intercept"};
  coefficients.insert(coefficients.end(), spec.covariates.begin(), spec.covariates.end());
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    assign(spec.params.beta(static_cast<Eigen::Index>(k)), keys.number("beta." + coefficients[k]));
  }
  auto& p = spec.params;
  for (auto [key, slot] : std::initializer_list<std::pair<const char*, double*>>{
           {"lambda", &p.lambda}, {"tau2", &p.tau2}, {"sigma2", &p.sigma2}, {"rho0", &p.rho0}, {"u", &p.u},
           {"rho1", &p.rho1}, {"alpha", &p.alpha}, {"c", &p.c}}) {
    assign(*slot, keys.number(key));
  }
  const auto phi = keys.number("phi");
  const double radius = keys.number("spectral_radius").value_or(0.6);
  keys.finish();
  if (phi) {
    p.phi = *phi;
  } else if (spec.model != ModelClass::no_ar) {
    p.phi = phi_for_radius(spec, radius);
  }

  const SynthResult sim = simulate(spec);
  m.seed(spec.seed);
  m.settings()["model"] = to_string(spec.model);
  m.settings()["steps"] = spec.steps;
  m.settings()["spectral_radius"] = sim.spectral_radius;
  const fs::path out = g.out;
  m.output(out, "stations.csv", stations_csv(sim.data.stations));
  m.output(out, "observations.csv", observations_csv(sim.data.observations, sim.data.stations));
  m.output(out, "covariates.csv", covariates_csv(sim.data.covariates, sim.data.stations));
  m.output(out, "wind.csv", wind_csv(sim.data.wind));
  m.output(out, "truth.csv", params_kv(spec.model == ModelClass::no_ar ? [&] {
    Params q = p;
    q.phi = 0.0;
    return q;
  }() : p, coefficients));
  m.write(out);
  std::cout << "simulated " << sim.data.stations.size() << " sites x " << spec.steps << " steps into " << g.out
            << " (max spectral radius " << sim.spectral_radius << ")\n";
  return kExitOk;
}

// ----------------------------------------------------------------------- fit

struct FitOptions {
  DataPaths data;
  std::string model = "conv-drift";
  long train_end = 0;
  int chains = 1;
  int workers = 1;
  long keep = 200;
};

std::vector<std::string> param_columns(const std::vector<std::string>& coefficients) {
  std::vector<std::string> cols;
  for (const auto& [k, v] : params_to_keys(Params{1.0, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(coefficients.size()))},
                                           coefficients)) {
    cols.push_back(k);
  }
  return cols;
}

int cmd_fit(const Globals& g, const FitOptions& o) {
  Manifest m("fit", g);
  const Dataset data = o.data.load(m);
  const ModelClass model = parse_model_class(o.model);
  const Eigen::Index train_end = o.train_end > 0 ? o.train_end : data.observations.steps();
  if (train_end > data.observations.steps()) throw ValidationError("--train-end beyond the observations");
  if (o.chains < 1 || o.workers < 1) throw ValidationError("--chains and --workers must be >= 1");
  if (o.keep < 1) throw ValidationError("--keep must be >= 1");

  Keys keys = config_keys(g);
  ChainConfig cfg;
  PriorConfig prior;
  assign(cfg.n_burnin, keys.integer("n_burnin"));
  assign(cfg.n_samples, keys.integer("n_samples"));
  assign(cfg.thin, keys.integer("thin"));
  if (auto v = keys.integer("seed")) cfg.seed = static_cast<std::uint64_t>(*v);
  if (g.seed) cfg.seed = *g.seed;
  if (auto v = keys.text("strategy")) cfg.strategy = parse_latent_strategy(*v);
  if (auto v = keys.integer("adapt")) cfg.adapt = *v != 0;
  assign(cfg.proposal.lambda, keys.number("proposal.lambda"));
  assign(cfg.proposal.rho0, keys.number("proposal.rho0"));
  assign(cfg.proposal.rho1, keys.number("proposal.rho1"));
  assign(cfg.proposal.c, keys.number("proposal.c"));
  assign(cfg.proposal.alpha, keys.number("proposal.alpha"));
  assign(cfg.proposal.u, keys.number("proposal.u"));
  assign(prior.rho_mean, keys.number("prior.rho_mean"));
  assign(prior.rho_var, keys.number("prior.rho_var"));
  assign(prior.c_mean, keys.number("prior.c_mean"));
  assign(prior.c_var, keys.number("prior.c_var"));
  assign(prior.u_var, keys.number("prior.u_var"));
  keys.finish();
  cfg.validate();

  const long per_chain = cfg.n_samples / cfg.thin;
  const long wanted_per_chain = (o.keep + o.chains - 1) / o.chains;
  cfg.latent_every = std::max(1L, per_chain / std::max(1L, wanted_per_chain));

  const Eigen::VectorXd areas = build_tessellation(data.stations).areas();
  const Posterior post(data, train_end, areas, model, prior);
  const ChainOutput out = run_chains(post, cfg, o.chains, o.workers);

  const auto coefficients = data.covariates.coefficient_names();
  const auto cols = param_columns(coefficients);
  const fs::path dir = g.out;

  std::string draws = "draw,chain";
  for (const auto& c : cols) draws += "," + c;
  draws += ",log_posterior\n";
  std::vector<std::vector<double>> values(cols.size());
  for (std::size_t k = 0; k < out.draws.size(); ++k) {
    const Draw& d = out.draws[k];
    draws += std::to_string(k) + "," + std::to_string(d.chain);
    const auto kv = params_to_keys(d.params, coefficients);
    for (std::size_t c = 0; c < kv.size(); ++c) {
      draws += "," + format_double(kv[c].second);
      values[c].push_back(kv[c].second);
    }
    draws += "," + format_double(d.log_posterior) + "\n";
  }
  m.output(dir, "draws.csv", draws);

  std::string acc = "block,accepted,proposed,rate,final_scale\n";
  for (const auto& a : out.acceptance) {
    acc += a.block + "," + std::to_string(a.accepted) + "," + std::to_string(a.proposed) + "," +
           format_double(a.rate()) + "," + format_double(a.final_scale) + "\n";
  }
  m.output(dir, "acceptance.csv", acc);

  const std::size_t mode = out.mode_index();
  std::string summary = "parameter,mean,sd,q025,q50,q975,mode\n";
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& v = values[c];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    summary += cols[c] + "," + format_double(mean) + "," + format_double(sd) + "," + format_double(quantile(v, 0.025)) +
               "," + format_double(quantile(v, 0.5)) + "," + format_double(quantile(v, 0.975)) + "," +
               format_double(v[mode]) + "\n";
  }
  m.output(dir, "summary.csv", summary);

  std::vector<std::size_t> with_latent;
  for (std::size_t k = 0; k < out.draws.size(); ++k) {
    if (out.draws[k].latent) with_latent.push_back(k);
  }
  std::string latent = "draw,field,t";
  for (const auto& s : data.stations.sites()) latent += "," + s.id;
  latent += "\n";
  for (std::size_t pick : subsample_indices(with_latent.size(), static_cast<std::size_t>(o.keep))) {
    const std::size_t k = with_latent[pick];
    const LatentState& ls = *out.draws[k].latent;
    auto rows = [&](const char* field, const Eigen::MatrixXd& mat, Eigen::Index first_t) {
      for (Eigen::Index r = 0; r < mat.rows(); ++r) {
        latent += std::to_string(k) + "," + field + "," + std::to_string(r + first_t);
        for (Eigen::Index i = 0; i < mat.cols(); ++i) latent += "," + format_double(mat(r, i));
        latent += "\n";
      }
    };
    rows("xi", ls.xi, 0);
    rows("w", ls.w, 1);
  }
  m.output(dir, "latent.csv", latent);

  m.seed(cfg.seed);
  auto& s = m.settings();
  s["model"] = to_string(model);
  s["train_end"] = train_end;
  s["chains"] = o.chains;
  s["n_burnin"] = cfg.n_burnin;
  s["n_samples"] = cfg.n_samples;
  s["thin"] = cfg.thin;
  s["strategy"] = to_string(resolve_strategy(cfg.strategy, model));
  s["coefficients"] = coefficients;
  s["mode_spectral_radius"] = out.mode_spectral_radius;
  s["diagnostics"] = out.diagnostics;
  m.write(dir);
  std::cout << "fit " << to_string(model) << ": " << out.draws.size() << " draws, mode spectral radius "
            << out.mode_spectral_radius << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- predict

struct PredictOptions {
  DataPaths data;
  std::string fit_dir;
  std::string request;
  int workers = 1;
};

std::vector<Draw> read_posterior(const fs::path& dir, const std::vector<std::string>& coefficients,
                                 Eigen::Index train_end, const StationSet& stations) {
  const CsvTable draws = read_csv(dir / "draws.csv");
  require_header(draws, {"draw", "chain"});
  const CsvTable latent = read_csv(dir / "latent.csv");
  require_header(latent, {"draw", "field", "t"});
  const Eigen::Index n = stations.size();
  if (latent.header.size() != static_cast<std::size_t>(n) + 3) {
    throw ValidationError(latent.path + ": expected one column per station");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (latent.header[static_cast<std::size_t>(i) + 3] != stations[i].id) {
      throw ValidationError(latent.path + ": column " + std::to_string(i + 4) + " is '" +
                            latent.header[static_cast<std::size_t>(i) + 3] + "', expected '" + stations[i].id + "'");
    }
  }
  std::map<long, LatentState> states;
  for (std::size_t r = 0; r < latent.rows.size(); ++r) {
    const auto& row = latent.rows[r];
    const long k = parse_long(row[0], latent.where(r));
    const long t = parse_long(row[2], latent.where(r));
    auto& s = states[k];
    if (s.xi.size() == 0) {
      s.xi = Eigen::MatrixXd::Constant(train_end + 1, n, std::nan(""));
      s.w = Eigen::MatrixXd::Constant(train_end, n, std::nan(""));
    }
    const bool is_xi = row[1] == "xi";
    if (!is_xi && row[1] != "w") throw ValidationError(latent.where(r) + ": field must be xi or w");
    if (t < (is_xi ? 0 : 1) || t > train_end) throw ValidationError(latent.where(r) + ": t outside the training period");
    auto target = is_xi ? s.xi.row(t) : s.w.row(t - 1);
    for (Eigen::Index i = 0; i < n; ++i) target(i) = parse_double(row[static_cast<std::size_t>(i) + 3], latent.where(r));
  }
  std::vector<Draw> out;
  for (auto& [k, s] : states) {
    if (!s.xi.allFinite() || !s.w.allFinite()) {
      throw ValidationError(latent.path + ": incomplete latent snapshot for draw " + std::to_string(k));
    }
    if (k < 0 || static_cast<std::size_t>(k) >= draws.rows.size()) {
      throw ValidationError(latent.path + ": draw " + std::to_string(k) + " not in draws.csv");
    }
    const auto& row = draws.rows[static_cast<std::size_t>(k)];
    std::map<std::string, std::string> kv;
    for (std::size_t c = 0; c < draws.header.size(); ++c) kv[draws.header[c]] = row[c];
    Draw d;
    d.chain = static_cast<std::uint64_t>(parse_long(row[1], draws.where(static_cast<std::size_t>(k))));
    d.params = params_from_keys(kv, coefficients, draws.where(static_cast<std::size_t>(k)));
    d.latent = std::move(s);
    out.push_back(std::move(d));
  }
  if (out.empty()) throw ValidationError(latent.path + ": no latent snapshots");
  return out;
}

Polygon read_polygon(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require_header(t, {"x", "y"});
  Polygon poly;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    poly.emplace_back(parse_double(t.rows[r][0], t.where(r) + " column x"),
                      parse_double(t.rows[r][1], t.where(r) + " column y"));
  }
  return poly;
}

std::optional<Point> parse_point(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos || s.find(':', colon + 1) != std::string::npos) return std::nullopt;
  try {
    return Point(parse_double(s.substr(0, colon), s), parse_double(s.substr(colon + 1), s));
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

int cmd_predict(const Globals& g, const PredictOptions& o) {
  Manifest m("predict", g);
  const Dataset data = o.data.load(m);
  if (o.fit_dir.empty()) throw ValidationError("--fit directory is required");
  if (o.request.empty()) throw ValidationError("--request file is required");
  const json fit = read_manifest(o.fit_dir);
  const json& fs_ = fit.at("settings");
  const ModelClass model = parse_model_class(fs_.at("model").get<std::string>());
  const Eigen::Index train_end = fs_.at("train_end").get<Eigen::Index>();
  const auto coefficients = fs_.at("coefficients").get<std::vector<std::string>>();
  if (coefficients != data.covariates.coefficient_names()) {
    throw ValidationError("covariate names differ from those used in the fit");
  }
  m.input("draws", fs::path(o.fit_dir) / "draws.csv");
  m.input("latent", fs::path(o.fit_dir) / "latent.csv");
  m.input("request", o.request);

  Keys keys = config_keys(g);
  ForecastConfig cfg;
  if (auto v = keys.integer("refresh_sweeps")) cfg.refresh_sweeps = static_cast<int>(*v);
  if (auto v = keys.integer("lag")) cfg.lag = static_cast<int>(*v);
  const long n_draws = keys.integer("draws").value_or(200);
  if (auto v = keys.integer("seed")) cfg.seed = static_cast<std::uint64_t>(*v);
  keys.finish();
  if (g.seed) cfg.seed = *g.seed;
  cfg.workers = o.workers;
  if (n_draws < 1) throw ValidationError("draws must be >= 1");

  std::vector<Draw> all = read_posterior(o.fit_dir, coefficients, train_end, data.stations);
  std::vector<Draw> draws;
  for (std::size_t k : subsample_indices(all.size(), static_cast<std::size_t>(n_draws))) draws.push_back(all[k]);

  const Tessellation tess = build_tessellation(data.stations);
  const CsvTable req = read_csv(o.request);
  require_header(req, {"time", "target"});
  const bool has_origin = req.header.size() > 2 && req.header[2] == "origin";
  std::vector<Target> targets;
  std::string weights_csv;
  std::set<std::string> weighted;
  for (std::size_t r = 0; r < req.rows.size(); ++r) {
    const auto& row = req.rows[r];
    const Eigen::Index time = parse_long(row[0], req.where(r) + " column time");
    const Eigen::Index origin =
        has_origin && !row[2].empty() ? parse_long(row[2], req.where(r) + " column origin") : train_end;
    const std::string& target = row[1];
    if (const Eigen::Index i = data.stations.index_of(target); i >= 0) {
      targets.push_back(Target::at_station(origin, time, i, target));
    } else if (auto pt = parse_point(target)) {
      targets.push_back(Target::at_point(origin, time, *pt, target));
    } else {
      const fs::path region_path = fs::path(o.request).parent_path() / target;
      if (!fs::exists(region_path)) {
        throw ValidationError(req.where(r) + ": target '" + target + "' is not a station id, x:y point or region file");
      }
      const ArealWeights w = areal_weights(tess, Region(read_polygon(region_path)));
      if (w.disjoint) throw ValidationError(req.where(r) + ": region '" + target + "' does not overlap any cell");
      targets.push_back(Target::areal(origin, time, w.weights, target));
      if (weighted.insert(target).second) {
        if (weights_csv.empty()) {
          weights_csv = "target";
          for (const auto& s : data.stations.sites()) weights_csv += "," + s.id;
          weights_csv += "\n";
        }
        weights_csv += target;
        for (Eigen::Index i = 0; i < w.weights.size(); ++i) weights_csv += "," + format_double(w.weights(i));
        weights_csv += "\n";
        m.input("region:" + target, region_path);
      }
    }
  }

  const PredictiveEnsemble ens = predict_ahead(data, tess.areas(), model, train_end, draws, targets, cfg);
  for (const auto& w : ens.warnings) std::cerr << "warning: " << w << "\n";

  std::string samples = "origin,time,lead,target,class";
  for (Eigen::Index j = 0; j < ens.samples.cols(); ++j) samples += ",sample_" + std::to_string(j);
  samples += "\n";
  std::string quant = "origin,time,lead,target,class,q05,q25,q50,q75,q95\n";
  for (std::size_t k = 0; k < ens.targets.size(); ++k) {
    const Target& t = ens.targets[k];
    const std::string head = std::to_string(t.origin) + "," + std::to_string(t.time) + "," +
                             std::to_string(t.lead()) + "," + t.label + "," + to_string(t.kind);
    samples += head;
    std::vector<double> v(static_cast<std::size_t>(ens.samples.cols()));
    for (Eigen::Index j = 0; j < ens.samples.cols(); ++j) {
      v[static_cast<std::size_t>(j)] = ens.samples(static_cast<Eigen::Index>(k), j);
      samples += "," + format_double(v[static_cast<std::size_t>(j)]);
    }
    samples += "\n";
    quant += head;
    for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) quant += "," + format_double(quantile(v, p));
    quant += "\n";
  }
  const fs::path dir = g.out;
  m.output(dir, "samples.csv", samples);
  m.output(dir, "quantiles.csv", quant);
  if (!weights_csv.empty()) m.output(dir, "areal_weights.csv", weights_csv);
  m.seed(cfg.seed);
  auto& s = m.settings();
  s["model"] = to_string(model);
  s["train_end"] = train_end;
  s["draws"] = draws.size();
  s["refresh_sweeps"] = cfg.refresh_sweeps;
  s["lag"] = cfg.lag;
  s["warnings"] = ens.warnings;
  m.write(dir);
  std::cout << "predicted " << ens.targets.size() << " targets x " << ens.samples.cols() << " samples\n";
  return kExitOk;
}

// --------------------------------------------------------------------- score

struct ScoreOptions {
  std::string predictions;
  std::string observations;
  std::string stations;
  std::string exclude;
  bool force = false;
};

int cmd_score(const Globals& g, const ScoreOptions& o) {
  Manifest m("score", g);
  if (o.predictions.empty() || o.observations.empty() || o.stations.empty()) {
    throw ValidationError("--predictions, --observations and --stations are required");
  }
  const fs::path pdir = o.predictions;
  const json pm = read_manifest(pdir);
  const std::string obs_hash = sha256_file(o.observations);
  const std::string samples_hash = sha256_file(pdir / "samples.csv");
  std::vector<std::string> problems;
  if (pm.at("inputs").at("observations").at("sha256").get<std::string>() != obs_hash) {
    problems.push_back("observations file differs from the one used for prediction");
  }
  if (pm.at("outputs").at("samples.csv").get<std::string>() != samples_hash) {
    problems.push_back("samples.csv differs from the predict manifest");
  }
  if (!problems.empty() && !o.force) {
    std::string msg = "manifest mismatch: ";
    for (std::size_t k = 0; k < problems.size(); ++k) msg += (k ? "; " : "") + problems[k];
    throw ManifestMismatch(msg + " (use --force to score anyway)");
  }
  for (const auto& p : problems) std::cerr << "warning: " << p << " (forced)\n";

  const StationSet stations = read_stations(o.stations);
  const ObservationGrid obs = read_observations(o.observations, stations);
  m.input("predictions", pdir / "samples.csv");
  m.input("observations", o.observations);
  m.input("stations", o.stations);

  std::map<std::string, Eigen::VectorXd> weights;
  if (fs::exists(pdir / "areal_weights.csv")) {
    const CsvTable w = read_csv(pdir / "areal_weights.csv");
    require_header(w, {"target"});
    for (std::size_t r = 0; r < w.rows.size(); ++r) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(stations.size());
      for (std::size_t c = 1; c < w.header.size(); ++c) {
        const Eigen::Index i = stations.index_of(w.header[c]);
        if (i < 0) throw ValidationError(w.path + ": unknown station id '" + w.header[c] + "'");
        v(i) = parse_double(w.rows[r][c], w.where(r));
      }
      weights[w.rows[r][0]] = v;
    }
  }

  std::set<Eigen::Index> excluded;
  if (!o.exclude.empty()) {
    std::size_t start = 0;
    while (start <= o.exclude.size()) {
      const auto comma = o.exclude.find(',', start);
      excluded.insert(parse_long(o.exclude.substr(start, comma - start), "--exclude"));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }

  const CsvTable s = read_csv(pdir / "samples.csv");
  require_header(s, {"origin", "time", "lead", "target", "class"});
  std::vector<ScoredForecast> forecasts;
  long skipped = 0;
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    const auto& row = s.rows[r];
    ScoredForecast f;
    f.time = parse_long(row[1], s.where(r));
    f.lead = parse_long(row[2], s.where(r));
    f.target_class = row[4];
    std::optional<double> y;
    if (f.time >= 1 && f.time <= obs.steps()) {
      if (f.target_class == "station") {
        const Eigen::Index i = stations.index_of(row[3]);
        if (i < 0) throw ValidationError(s.where(r) + ": unknown station id '" + row[3] + "'");
        const auto& o_ = obs.at(f.time, i);
        if (o_.kind != ObsKind::missing) y = o_.amount;
      } else if (f.target_class == "areal") {
        const auto it = weights.find(row[3]);
        if (it == weights.end()) throw ValidationError(s.where(r) + ": no areal weights for '" + row[3] + "'");
        double total = 0.0;
        bool complete = true;
        for (Eigen::Index i = 0; i < stations.size(); ++i) {
          if (it->second(i) == 0.0) continue;
          const auto& o_ = obs.at(f.time, i);
          if (o_.kind == ObsKind::missing) complete = false;
          total += it->second(i) * o_.amount;
        }
        if (complete) y = total / it->second.sum();
      }
    }
    if (!y) {
      ++skipped;
      continue;
    }
    f.obs = *y;
    for (std::size_t c = 5; c < row.size(); ++c) f.samples.push_back(parse_double(row[c], s.where(r)));
    forecasts.push_back(std::move(f));
  }
  const auto table = score_table(forecasts, excluded);
  std::string csv = "lead,class,metric,value,n\n";
  for (const auto& row : table) {
    csv += std::to_string(row.lead) + "," + row.target_class + "," + row.metric + "," + format_double(row.value) +
           "," + std::to_string(row.n) + "\n";
  }
  m.output(g.out, "scores.csv", csv);
  m.settings()["forced"] = !problems.empty();
  m.settings()["skipped_rows"] = skipped;
  m.settings()["excluded_times"] = std::vector<Eigen::Index>(excluded.begin(), excluded.end());
  m.write(g.out);
  std::cout << "scored " << forecasts.size() << " forecasts (" << skipped << " without observations)\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Censored convolution-autoregressive rainfall model", "convar"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master random seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--config", g.config, "key=value configuration file")->check(CLI::ExistingFile);

  std::string stations_path;
  auto* tess = app.add_subcommand("tessellate", "Voronoi cells, areas and neighbours of a station layout");
  tess->add_option("--stations", stations_path, "Stations CSV (id,x,y)")->required();

  auto* sim = app.add_subcommand("simulate", "Simulate a synthetic dataset");

  FitOptions fo;
  auto* fit = app.add_subcommand("fit", "Run the MCMC sampler");
  fo.data.add(fit);
  fit->add_option("--model", fo.model, "conv-drift | conv-iso | separable | no-ar");
  fit->add_option("--train-end", fo.train_end, "Last time step used for fitting (default: all)");
  fit->add_option("--chains", fo.chains, "Independent chains");
  fit->add_option("--workers", fo.workers, "Threads running chains");
  fit->add_option("--keep", fo.keep, "Latent snapshots kept for prediction");

  PredictOptions po;
  auto* pred = app.add_subcommand("predict", "Sample predictive distributions");
  po.data.add(pred);
  pred->add_option("--fit", po.fit_dir, "Output directory of fit")->required();
  pred->add_option("--request", po.request, "Request CSV (time,target[,origin])")->required();
  pred->add_option("--workers", po.workers, "Threads over posterior draws");

  ScoreOptions so;
  auto* score = app.add_subcommand("score", "CRPS and MAE of predictions");
  score->add_option("--predictions", so.predictions, "Output directory of predict")->required();
  score->add_option("--observations", so.observations, "Observations CSV")->required();
  score->add_option("--stations", so.stations, "Stations CSV")->required();
  score->add_option("--exclude", so.exclude, "Comma-separated time steps to leave out");
  score->add_flag("--force", so.force, "Score despite manifest mismatches");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*tess) return cmd_tessellate(g, stations_path);
    if (*sim) return cmd_simulate(g);
    if (*fit) return cmd_fit(g, fo);
    if (*pred) return cmd_predict(g, po);
    if (*score) return cmd_score(g, so);
  } catch (const ManifestMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitManifest;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed manifest: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace convar
