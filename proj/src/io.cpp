#include "convar/io.hpp"

#include "convar/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace convar {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == name) return k;
  }
  throw ValidationError(path + ": missing column '" + name + "'");
}

std::string CsvTable::where(std::size_t r) const { return path + ":" + std::to_string(r + 2); }

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  CsvTable t;
  t.path = path.string();
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(t.path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (auto& h : split(line)) t.header.push_back(trim(h));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (fields.size() != t.header.size()) {
      throw ValidationError(t.path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void require_header(const CsvTable& t, const std::vector<std::string>& expected) {
  for (std::size_t k = 0; k < expected.size(); ++k) {
    if (k >= t.header.size()) throw ValidationError(t.path + ": missing column '" + expected[k] + "'");
    if (t.header[k] != expected[k]) {
      throw ValidationError(t.path + ": column " + std::to_string(k + 1) + " is '" + t.header[k] + "', expected '" +
                            expected[k] + "'");
    }
  }
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ValidationError(where + ": '" + s + "' is not a finite number");
  }
  return v;
}

long parse_long(const std::string& s, const std::string& where) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ValidationError(where + ": '" + s + "' is not an integer");
  }
  return v;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

StationSet read_stations(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require_header(t, {"id", "x", "y"});
  std::vector<Site> sites;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row[0].empty()) throw ValidationError(t.where(r) + ": empty station id");
    sites.push_back({row[0], Point(parse_double(row[1], t.where(r) + " column x"),
                                   parse_double(row[2], t.where(r) + " column y"))});
  }
  if (sites.empty()) throw ValidationError(t.path + ": no stations");
  return StationSet(std::move(sites));
}

std::string stations_csv(const StationSet& s) {
  std::string out = "id,x,y\n";
  for (const auto& site : s.sites()) {
    out += site.id + "," + format_double(site.coord.x()) + "," + format_double(site.coord.y()) + "\n";
  }
  return out;
}

namespace {

// Row index per (time, station) for the long layouts, checking completeness.
std::vector<std::vector<std::size_t>> index_long_table(const CsvTable& t, const StationSet& stations) {
  const std::size_t tc = 0, sc = 1;
  long max_time = 0;
  std::vector<long> times(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    times[r] = parse_long(t.rows[r][tc], t.where(r) + " column time");
    if (times[r] < 1) throw ValidationError(t.where(r) + ": time must be >= 1");
    max_time = std::max(max_time, times[r]);
  }
  const auto n = static_cast<std::size_t>(stations.size());
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(max_time), std::vector<std::size_t>(n, kUnset));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const Eigen::Index i = stations.index_of(t.rows[r][sc]);
    if (i < 0) throw ValidationError(t.where(r) + ": unknown station id '" + t.rows[r][sc] + "'");
    auto& slot = idx[static_cast<std::size_t>(times[r] - 1)][static_cast<std::size_t>(i)];
    if (slot != kUnset) throw ValidationError(t.where(r) + ": duplicate row for time " + t.rows[r][tc] +
                                              ", station '" + t.rows[r][sc] + "'");
    slot = r;
  }
  for (std::size_t k = 0; k < idx.size(); ++k) {
    bool any = false, all = true;
    for (std::size_t v : idx[k]) {
      if (v == kUnset) {
        all = false;
      } else {
        any = true;
      }
    }
    if (!any) throw ValidationError(t.path + ": time gap, no rows for time " + std::to_string(k + 1));
    if (!all) {
      for (std::size_t i = 0; i < n; ++i) {
        if (idx[k][i] == kUnset) {
          throw ValidationError(t.path + ": no row for time " + std::to_string(k + 1) + ", station '" +
                                stations[static_cast<Eigen::Index>(i)].id + "'");
        }
      }
    }
  }
  return idx;
}

}  // namespace

ObservationGrid read_observations(const fs::path& path, const StationSet& stations) {
  const CsvTable t = read_csv(path);
  require_header(t, {"time", "station", "rain"});
  const auto idx = index_long_table(t, stations);
  ObservationGrid grid(static_cast<Eigen::Index>(idx.size()), stations.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    for (std::size_t i = 0; i < idx[k].size(); ++i) {
      const std::size_t r = idx[k][i];
      const std::string& v = t.rows[r][2];
      Observation o = Observation::missing();
      if (!v.empty()) {
        const double mm = parse_double(v, t.where(r) + " column rain");
        if (mm < 0.0) throw ValidationError(t.where(r) + ": negative rainfall " + v);
        o = Observation::from_amount(mm);
      }
      grid.at(static_cast<Eigen::Index>(k + 1), static_cast<Eigen::Index>(i)) = o;
    }
  }
  return grid;
}

std::string observations_csv(const ObservationGrid& obs, const StationSet& stations) {
  std::string out = "time,station,rain\n";
  for (Eigen::Index t = 1; t <= obs.steps(); ++t) {
    for (Eigen::Index i = 0; i < obs.stations(); ++i) {
      const auto& o = obs.at(t, i);
      out += std::to_string(t) + "," + stations[i].id + ",";
      if (o.kind != ObsKind::missing) out += format_double(o.amount);
      out += "\n";
    }
  }
  return out;
}

CovariateGrid read_covariates(const fs::path& path, const StationSet& stations) {
  const CsvTable t = read_csv(path);
  require_header(t, {"time", "station"});
  std::vector<std::string> names(t.header.begin() + 2, t.header.end());
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty() || !seen.insert(n).second) throw ValidationError(t.path + ": bad or duplicate covariate name '" + n + "'");
  }
  const auto idx = index_long_table(t, stations);
  const auto k = static_cast<Eigen::Index>(names.size());
  std::vector<Eigen::MatrixXd> values;
  for (const auto& step : idx) {
    Eigen::MatrixXd x(stations.size(), k);
    for (std::size_t i = 0; i < step.size(); ++i) {
      const std::size_t r = step[i];
      for (Eigen::Index j = 0; j < k; ++j) {
        x(static_cast<Eigen::Index>(i), j) =
            parse_double(t.rows[r][static_cast<std::size_t>(j + 2)], t.where(r) + " column " + names[static_cast<std::size_t>(j)]);
      }
    }
    values.push_back(std::move(x));
  }
  return CovariateGrid(std::move(names), std::move(values));
}

std::string covariates_csv(const CovariateGrid& cov, const StationSet& stations) {
  std::string out = "time,station";
  for (const auto& n : cov.names()) out += "," + n;
  out += "\n";
  for (Eigen::Index t = 1; t <= cov.steps(); ++t) {
    const auto& x = cov.at(t);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out += std::to_string(t) + "," + stations[i].id;
      for (Eigen::Index j = 0; j < x.cols(); ++j) out += "," + format_double(x(i, j));
      out += "\n";
    }
  }
  return out;
}

WindSeries read_wind(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require_header(t, {"time", "wx", "wy"});
  std::vector<Eigen::Vector2d> w(t.rows.size());
  std::vector<bool> seen(t.rows.size(), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const long time = parse_long(t.rows[r][0], t.where(r) + " column time");
    if (time < 1 || static_cast<std::size_t>(time) > t.rows.size()) {
      throw ValidationError(t.where(r) + ": time " + t.rows[r][0] + " outside 1.." + std::to_string(t.rows.size()) +
                            " (time gap or duplicate)");
    }
    const auto k = static_cast<std::size_t>(time - 1);
    if (seen[k]) throw ValidationError(t.where(r) + ": duplicate time " + t.rows[r][0]);
    seen[k] = true;
    w[k] = Eigen::Vector2d(parse_double(t.rows[r][1], t.where(r) + " column wx"),
                           parse_double(t.rows[r][2], t.where(r) + " column wy"));
  }
  return WindSeries(std::move(w));
}

std::string wind_csv(const WindSeries& wind) {
  std::string out = "time,wx,wy\n";
  for (Eigen::Index t = 1; t <= wind.steps(); ++t) {
    out += std::to_string(t) + "," + format_double(wind.at(t).x()) + "," + format_double(wind.at(t).y()) + "\n";
  }
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  return parse_key_values(read_file(path), path.string());
}

Params params_from_keys(const std::map<std::string, std::string>& kv, const std::vector<std::string>& coefficients,
                        const std::string& origin) {
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(origin + ": missing key '" + key + "'");
    return parse_double(it->second, origin + " key " + key);
  };
  Params p;
  p.lambda = get("lambda");
  p.beta.resize(static_cast<Eigen::Index>(coefficients.size()));
  for (std::size_t k = 0; k < coefficients.size(); ++k) p.beta(static_cast<Eigen::Index>(k)) = get("beta." + coefficients[k]);
  p.tau2 = get("tau2");
  p.sigma2 = get("sigma2");
  p.rho0 = get("rho0");
  p.phi = get("phi");
  p.u = get("u");
  p.rho1 = get("rho1");
  p.alpha = get("alpha");
  p.c = get("c");
  return p;
}

std::vector<std::pair<std::string, double>> params_to_keys(const Params& p,
                                                           const std::vector<std::string>& coefficients) {
  std::vector<std::pair<std::string, double>> out{{"lambda", p.lambda}};
  for (std::size_t k = 0; k < coefficients.size(); ++k) {
    out.emplace_back("beta." + coefficients[k], p.beta(static_cast<Eigen::Index>(k)));
  }
  out.insert(out.end(), {{"tau2", p.tau2}, {"sigma2", p.sigma2}, {"rho0", p.rho0}, {"phi", p.phi}, {"u", p.u},
                         {"rho1", p.rho1}, {"alpha", p.alpha}, {"c", p.c}});
  return out;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 15];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

}  // namespace convar
