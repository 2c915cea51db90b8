#pragma once

#include "convar/data.hpp"
#include "convar/mcmc.hpp"
#include "convar/model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace convar {

namespace fs = std::filesystem;

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index of `name`, throwing a ValidationError naming it when absent.
  std::size_t column(const std::string& name) const;
  /// "path:line" for data row r.
  std::string where(std::size_t r) const;
};

/// Comma-separated, no quoting. Every row must have as many fields as the header.
CsvTable read_csv(const fs::path& path);
/// Requires the header to begin with `expected`, naming the first offending column.
void require_header(const CsvTable& t, const std::vector<std::string>& expected);

double parse_double(const std::string& s, const std::string& where);
long parse_long(const std::string& s, const std::string& where);

/// Shortest round-trip decimal form.
std::string format_double(double x);

/// stations.csv: id,x,y
StationSet read_stations(const fs::path& path);
std::string stations_csv(const StationSet& s);

/// observations.csv: time,station,rain[,iso_time] with one row per (time, station),
/// times contiguous from 1, empty rain = missing.
ObservationGrid read_observations(const fs::path& path, const StationSet& stations);
std::string observations_csv(const ObservationGrid& obs, const StationSet& stations);

/// covariates.csv: time,station,<name>...
CovariateGrid read_covariates(const fs::path& path, const StationSet& stations);
std::string covariates_csv(const CovariateGrid& cov, const StationSet& stations);

/// wind.csv: time,wx,wy in m/s
WindSeries read_wind(const fs::path& path);
std::string wind_csv(const WindSeries& wind);

/// Lines of key=value; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> read_key_values(const fs::path& path);
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin);

/// Keys lambda, beta.<coefficient>, tau2, sigma2, rho0, phi, u, rho1, alpha, c.
Params params_from_keys(const std::map<std::string, std::string>& kv, const std::vector<std::string>& coefficients,
                        const std::string& origin);
std::vector<std::pair<std::string, double>> params_to_keys(const Params& p,
                                                           const std::vector<std::string>& coefficients);

/// Writes to a temporary sibling and renames it into place.
void write_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const fs::path& path);

}  // namespace convar
