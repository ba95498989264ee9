#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsa/error.hpp"
#include "dsa/io.hpp"

namespace dsa {

inline constexpr double kMissing = -9999.0;

struct Grid {
  std::vector<double> lat;
  std::vector<double> lon;
  std::vector<double> weights;  // row-major (lat, lon), sums to 1

  std::size_t n_lat() const { return lat.size(); }
  std::size_t n_lon() const { return lon.size(); }
  std::size_t n_cells() const { return lat.size() * lon.size(); }

  static Grid make(std::vector<double> lat, std::vector<double> lon) {
    Grid g;
    g.lat = std::move(lat);
    g.lon = std::move(lon);
    check_axis(g.lat, "lat");
    check_axis(g.lon, "lon");
    g.weights.resize(g.n_cells());
    double tot = 0.0;
    for (std::size_t i = 0; i < g.n_lat(); ++i) {
      double w = std::max(0.0, std::cos(g.lat[i] * M_PI / 180.0));
      for (std::size_t j = 0; j < g.n_lon(); ++j) {
        g.weights[i * g.n_lon() + j] = w;
        tot += w;
      }
    }
    if (!(tot > 0.0)) throw UsageError("grid has zero total area weight");
    for (auto& w : g.weights) w /= tot;
    return g;
  }

  static Grid uniform(std::size_t n_lat, std::size_t n_lon, double lat0 = 0.0, double dlat = 1.0,
                      double lon0 = 0.0, double dlon = 1.0) {
    std::vector<double> la(n_lat), lo(n_lon);
    for (std::size_t i = 0; i < n_lat; ++i) la[i] = lat0 + dlat * static_cast<double>(i);
    for (std::size_t j = 0; j < n_lon; ++j) lo[j] = lon0 + dlon * static_cast<double>(j);
    return make(la, lo);
  }

  static void check_axis(const std::vector<double>& a, const char* name) {
    if (a.empty()) throw UsageError(std::string(name) + " axis is empty");
    if (!std::isfinite(a[0])) throw UsageError(std::string(name) + " axis has non-finite value");
    bool inc = a.size() < 2 || a[1] > a[0];
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (!std::isfinite(a[i]) || (inc ? !(a[i] > a[i - 1]) : !(a[i] < a[i - 1])))
        throw UsageError(std::string(name) + " axis not strictly monotone at index " + std::to_string(i));
    }
  }
};

struct TimeAxis {
  std::vector<double> t;
  double step = 1.0;

  std::size_t size() const { return t.size(); }

  static TimeAxis regular(double t0, double step, std::size_t n) {
    TimeAxis a;
    a.step = step;
    a.t.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.t[i] = t0 + step * static_cast<double>(i);
    return a;
  }

  static TimeAxis from_values(std::vector<double> v) {
    TimeAxis a;
    a.t = std::move(v);
    if (a.t.empty()) throw UsageError("empty time axis");
    if (a.t.size() == 1) {
      a.step = 1.0;
      return a;
    }
    a.step = (a.t.back() - a.t.front()) / static_cast<double>(a.t.size() - 1);
    if (!(a.step > 0.0)) throw UsageError("time axis not strictly increasing");
    for (std::size_t i = 1; i < a.t.size(); ++i) {
      double d = a.t[i] - a.t[i - 1];
      if (!(d > 0.0)) throw UsageError("time axis not strictly increasing at index " + std::to_string(i));
      if (std::abs(d - a.step) > 1e-9 * std::abs(a.step) + 1e-9 * std::abs(a.t[i]) * 1e-3)
        throw UsageError("irregular time axis at index " + std::to_string(i));
    }
    return a;
  }
};

// values indexed (component, time, lat, lon), lexicographic
struct Field {
  Grid grid;
  TimeAxis time;
  std::size_t n_comp = 1;
  std::vector<double> values;
  std::vector<unsigned char> mask;

  Field() = default;
  Field(Grid g, TimeAxis ta, std::size_t nc) : grid(std::move(g)), time(std::move(ta)), n_comp(nc) {
    if (nc == 0) throw UsageError("field needs at least one component");
    values.assign(nc * time.size() * grid.n_cells(), 0.0);
    mask.assign(values.size(), 0);
  }

  std::size_t n_time() const { return time.size(); }
  std::size_t n_cells() const { return grid.n_cells(); }
  std::size_t index(std::size_t c, std::size_t t, std::size_t cell) const {
    return (c * n_time() + t) * n_cells() + cell;
  }
  std::size_t index(std::size_t c, std::size_t t, std::size_t i, std::size_t j) const {
    return index(c, t, i * grid.n_lon() + j);
  }
  double& at(std::size_t c, std::size_t t, std::size_t cell) { return values[index(c, t, cell)]; }
  double at(std::size_t c, std::size_t t, std::size_t cell) const { return values[index(c, t, cell)]; }
  double& at(std::size_t c, std::size_t t, std::size_t i, std::size_t j) { return values[index(c, t, i, j)]; }
  double at(std::size_t c, std::size_t t, std::size_t i, std::size_t j) const { return values[index(c, t, i, j)]; }
  bool missing(std::size_t c, std::size_t t, std::size_t cell) const { return mask[index(c, t, cell)] != 0; }

  bool has_missing() const {
    return std::any_of(mask.begin(), mask.end(), [](unsigned char m) { return m != 0; });
  }

  void require_complete(const char* what) const {
    if (has_missing()) throw UsageError(std::string(what) + " requires a field without missing values; run fill first");
  }

  void validate() const {
    if (values.size() != n_comp * n_time() * n_cells() || mask.size() != values.size())
      throw UsageError("field shape inconsistent with grid x time x components");
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!mask[i] && !std::isfinite(values[i])) throw NumericalError("non-finite value at flat index " + std::to_string(i));
  }

  // time x cells
  Eigen::MatrixXd component_matrix(std::size_t c) const {
    Eigen::MatrixXd m(n_time(), n_cells());
    for (std::size_t t = 0; t < n_time(); ++t)
      for (std::size_t k = 0; k < n_cells(); ++k) m(t, k) = at(c, t, k);
    return m;
  }

  // time x (component * cells), component-major columns
  Eigen::MatrixXd flatten() const {
    Eigen::MatrixXd m(n_time(), n_comp * n_cells());
    for (std::size_t c = 0; c < n_comp; ++c) m.middleCols(c * n_cells(), n_cells()) = component_matrix(c);
    return m;
  }

  void set_component(std::size_t c, const Eigen::MatrixXd& m) {
    if (static_cast<std::size_t>(m.rows()) != n_time() || static_cast<std::size_t>(m.cols()) != n_cells())
      throw UsageError("component matrix shape mismatch");
    for (std::size_t t = 0; t < n_time(); ++t)
      for (std::size_t k = 0; k < n_cells(); ++k) at(c, t, k) = m(t, k);
  }

  static Field from_flat(const Grid& g, const TimeAxis& ta, const Eigen::MatrixXd& flat) {
    std::size_t nc = g.n_cells();
    if (static_cast<std::size_t>(flat.rows()) != ta.size() || flat.cols() % nc != 0)
      throw UsageError("flat matrix shape mismatch");
    Field f(g, ta, flat.cols() / nc);
    for (std::size_t c = 0; c < f.n_comp; ++c) f.set_component(c, flat.middleCols(c * nc, nc));
    return f;
  }
};

enum class FieldFormat { column_text, csv_grid };

inline FieldFormat parse_format(const std::string& s) {
  if (s == "column-text") return FieldFormat::column_text;
  if (s == "csv-grid") return FieldFormat::csv_grid;
  throw UsageError("unknown field format '" + s + "'");
}

namespace detail {

inline std::vector<double> parse_row(const std::vector<std::string>& toks, std::size_t line) {
  std::vector<double> v;
  v.reserve(toks.size());
  for (const auto& s : toks) {
    double x;
    if (!io::parse_double(s, x)) throw IoError("parse error at line " + std::to_string(line) + ": '" + s + "'");
    v.push_back(x);
  }
  return v;
}

inline Field read_column_text(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::size_t ln = 0;
  auto next = [&](const char* what) {
    do {
      if (!std::getline(in, line)) throw IoError(path.string() + ": unexpected end of file, expected " + what);
      ++ln;
    } while (line.find_first_not_of(" \t\r") == std::string::npos);
    return io::split_ws(line);
  };
  auto hdr = next("header");
  if (hdr.size() != 2 || hdr[0] != "DSAFIELD" || hdr[1] != "v1") throw IoError("parse error at line 1: bad magic");
  auto dims = parse_row(next("dimensions"), ln);
  if (dims.size() != 4) throw IoError("parse error at line " + std::to_string(ln) + ": expected 4 dimensions");
  for (double d : dims)
    if (d < 1 || d != std::floor(d)) throw IoError("parse error at line " + std::to_string(ln) + ": bad dimension");
  std::size_t nc = dims[0], nt = dims[1], nla = dims[2], nlo = dims[3];
  auto lat = parse_row(next("lat values"), ln);
  if (lat.size() != nla) throw IoError("inconsistent grid: line " + std::to_string(ln) + " has " + std::to_string(lat.size()) + " lat values");
  auto lon = parse_row(next("lon values"), ln);
  if (lon.size() != nlo) throw IoError("inconsistent grid: line " + std::to_string(ln) + " has " + std::to_string(lon.size()) + " lon values");
  auto ts = parse_row(next("timestamps"), ln);
  if (ts.size() != nt) throw IoError("inconsistent grid: line " + std::to_string(ln) + " has " + std::to_string(ts.size()) + " timestamps");
  Field f(Grid::make(lat, lon), TimeAxis::from_values(ts), nc);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    auto row = next("value");
    if (row.size() != 1) throw IoError("parse error at line " + std::to_string(ln) + ": expected one value");
    double v;
    if (!io::parse_double(row[0], v)) throw IoError("parse error at line " + std::to_string(ln) + ": '" + row[0] + "'");
    if (v == kMissing) {
      f.mask[i] = 1;
    } else if (!std::isfinite(v)) {
      throw IoError("parse error at line " + std::to_string(ln) + ": non-finite value");
    }
    f.values[i] = v;
  }
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") != std::string::npos)
      throw IoError("inconsistent grid: extra data at line " + std::to_string(ln));
  }
  return f;
}

inline std::string csv_name(std::size_t c, std::size_t t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "c%03zu_t%06zu.csv", c, t);
  return buf;
}

// Directory of c<comp>_t<step>.csv files; header: timestamp then lon values,
// each following row: lat value then one value per lon.
inline Field read_csv_grid(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("csv-grid path is not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") files.push_back(e.path());
  if (files.empty()) throw IoError("no csv files in " + dir.string());
  std::sort(files.begin(), files.end());
  std::size_t nc = 0;
  for (const auto& p : files) {
    auto name = p.filename().string();
    unsigned c = 0, t = 0;
    if (std::sscanf(name.c_str(), "c%u_t%u.csv", &c, &t) != 2) throw IoError("unexpected csv-grid file name " + name);
    nc = std::max<std::size_t>(nc, c + 1);
  }
  if (files.size() % nc) throw IoError("csv-grid: components have unequal step counts");
  std::size_t nt = files.size() / nc;
  std::vector<double> lat, lon, ts(nt);
  std::vector<std::vector<double>> blocks(files.size());
  for (std::size_t fi = 0; fi < files.size(); ++fi) {
    std::istringstream in(io::read_text(files[fi]));
    std::string line;
    std::size_t ln = 0;
    std::vector<double> la, lo, vals;
    while (std::getline(in, line)) {
      ++ln;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto row = parse_row(io::split_char(line, ','), ln);
      if (lo.empty() && ln == 1) {
        if (row.size() < 3) throw IoError(files[fi].string() + ": parse error at line 1: header too short");
        if (fi < nt) ts[fi] = row[0];
        lo.assign(row.begin() + 1, row.end());
        continue;
      }
      if (row.size() != lo.size() + 1)
        throw IoError(files[fi].string() + ": inconsistent grid at line " + std::to_string(ln));
      la.push_back(row[0]);
      vals.insert(vals.end(), row.begin() + 1, row.end());
    }
    if (fi == 0) {
      lat = la;
      lon = lo;
    } else if (la != lat || lo != lon) {
      throw IoError("inconsistent grid: " + files[fi].string() + " differs from first file");
    }
    blocks[fi] = std::move(vals);
  }
  Field f(Grid::make(lat, lon), TimeAxis::from_values(ts), nc);
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t t = 0; t < nt; ++t) {
      const auto& b = blocks[c * nt + t];
      for (std::size_t k = 0; k < b.size(); ++k) {
        auto idx = f.index(c, t, k);
        f.values[idx] = b[k];
        f.mask[idx] = b[k] == kMissing;
      }
    }
  return f;
}

}  // namespace detail

inline Field read_field(const std::filesystem::path& path, FieldFormat fmt = FieldFormat::column_text) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  Field f = fmt == FieldFormat::column_text ? detail::read_column_text(path) : detail::read_csv_grid(path);
  f.validate();
  return f;
}

inline std::string to_column_text(const Field& f) {
  std::string s = "DSAFIELD v1\n";
  s += std::to_string(f.n_comp) + " " + std::to_string(f.n_time()) + " " + std::to_string(f.grid.n_lat()) + " " +
       std::to_string(f.grid.n_lon()) + "\n";
  auto row = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + io::fmt(v[i]);
    s += "\n";
  };
  row(f.grid.lat);
  row(f.grid.lon);
  row(f.time.t);
  s.reserve(s.size() + f.values.size() * 24);
  for (std::size_t i = 0; i < f.values.size(); ++i) {
    s += f.mask[i] ? io::fmt(kMissing) : io::fmt(f.values[i]);
    s += '\n';
  }
  return s;
}

inline void write_field(const Field& f, const std::filesystem::path& path, FieldFormat fmt = FieldFormat::column_text) {
  if (fmt == FieldFormat::column_text) {
    io::atomic_write(path, to_column_text(f));
    return;
  }
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t t = 0; t < f.n_time(); ++t) {
      std::string s = io::fmt(f.time.t[t]);
      for (double lo : f.grid.lon) s += "," + io::fmt(lo);
      s += "\n";
      for (std::size_t i = 0; i < f.grid.n_lat(); ++i) {
        s += io::fmt(f.grid.lat[i]);
        for (std::size_t j = 0; j < f.grid.n_lon(); ++j) {
          auto idx = f.index(c, t, i, j);
          s += "," + io::fmt(f.mask[idx] ? kMissing : f.values[idx]);
        }
        s += "\n";
      }
      io::atomic_write(path / detail::csv_name(c, t), s);
    }
}

// Linear interpolation in time, constant extrapolation at the ends; cells with
// no valid sample copy the nearest complete cell (grid-index distance).
inline Field fill(const Field& f) {
  Field out = f;
  std::size_t nt = f.n_time(), ncell = f.n_cells();
  for (std::size_t c = 0; c < f.n_comp; ++c) {
    std::vector<unsigned char> empty(ncell, 0);
    for (std::size_t k = 0; k < ncell; ++k) {
      std::vector<std::size_t> ok;
      for (std::size_t t = 0; t < nt; ++t)
        if (!f.missing(c, t, k)) ok.push_back(t);
      if (ok.empty()) {
        empty[k] = 1;
        continue;
      }
      for (std::size_t t = 0; t < nt; ++t) {
        if (!f.missing(c, t, k)) continue;
        auto it = std::lower_bound(ok.begin(), ok.end(), t);
        double v;
        if (it == ok.begin()) {
          v = f.at(c, ok.front(), k);
        } else if (it == ok.end()) {
          v = f.at(c, ok.back(), k);
        } else {
          std::size_t t1 = *it, t0 = *(it - 1);
          double a = static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
          v = (1 - a) * f.at(c, t0, k) + a * f.at(c, t1, k);
        }
        out.at(c, t, k) = v;
        out.mask[out.index(c, t, k)] = 0;
      }
    }
    std::size_t nlo = f.grid.n_lon();
    for (std::size_t k = 0; k < ncell; ++k) {
      if (!empty[k]) continue;
      long bi = -1;
      double bd = 1e300;
      for (std::size_t q = 0; q < ncell; ++q) {
        if (empty[q]) continue;
        double di = double(k / nlo) - double(q / nlo), dj = double(k % nlo) - double(q % nlo);
        double d = di * di + dj * dj;
        if (d < bd) bd = d, bi = static_cast<long>(q);
      }
      if (bi < 0) throw UsageError("cannot fill: component " + std::to_string(c) + " has no valid samples");
      for (std::size_t t = 0; t < nt; ++t) {
        out.at(c, t, k) = out.at(c, t, bi);
        out.mask[out.index(c, t, k)] = 0;
      }
    }
  }
  return out;
}

inline Field moving_average(const Field& f, double window_days) {
  if (!(window_days > 0)) throw UsageError("moving average window must be positive");
  auto w = static_cast<std::size_t>(std::llround(window_days / f.time.step));
  if (w < 1) throw UsageError("moving average window spans less than one time step");
  if (w > f.n_time()) throw UsageError("moving average window larger than record");
  std::size_t nout = f.n_time() - w + 1;
  std::vector<double> ts(nout);
  for (std::size_t i = 0; i < nout; ++i) ts[i] = 0.5 * (f.time.t[i] + f.time.t[i + w - 1]);
  TimeAxis ta;
  ta.t = ts;
  ta.step = f.time.step;
  Field out(f.grid, ta, f.n_comp);
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t k = 0; k < f.n_cells(); ++k)
      for (std::size_t i = 0; i < nout; ++i) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t t = i; t < i + w; ++t)
          if (!f.missing(c, t, k)) s += f.at(c, t, k), ++n;
        auto idx = out.index(c, i, k);
        if (n) {
          out.values[idx] = s / static_cast<double>(n);
        } else {
          out.values[idx] = kMissing;
          out.mask[idx] = 1;
        }
      }
  return out;
}

struct Standardized {
  Field field;
  std::vector<double> mean;  // per (component, cell)
  std::vector<double> sd;

  Field invert(const Field& g) const {
    Field out = g;
    for (std::size_t c = 0; c < g.n_comp; ++c)
      for (std::size_t t = 0; t < g.n_time(); ++t)
        for (std::size_t k = 0; k < g.n_cells(); ++k) {
          auto idx = g.index(c, t, k);
          if (!g.mask[idx]) out.values[idx] = g.values[idx] * sd[c * g.n_cells() + k] + mean[c * g.n_cells() + k];
        }
    return out;
  }
};

// Population moments (divide by n).
inline Standardized standardize(const Field& f) {
  Standardized s{f, std::vector<double>(f.n_comp * f.n_cells()), std::vector<double>(f.n_comp * f.n_cells())};
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t k = 0; k < f.n_cells(); ++k) {
      std::size_t n = 0;
      double m = 0.0;
      for (std::size_t t = 0; t < f.n_time(); ++t)
        if (!f.missing(c, t, k)) m += f.at(c, t, k), ++n;
      if (n < 2) throw UsageError("standardize: fewer than 2 samples at component " + std::to_string(c) + " cell " + std::to_string(k));
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t t = 0; t < f.n_time(); ++t)
        if (!f.missing(c, t, k)) v += (f.at(c, t, k) - m) * (f.at(c, t, k) - m);
      double sd = std::sqrt(v / static_cast<double>(n));
      if (!(sd > 1e-300) || sd <= 1e-14 * std::max(1.0, std::abs(m)))
        throw NumericalError("standardize: zero variance at component " + std::to_string(c) + " cell " +
                             std::to_string(k) + " (lat " + io::fmt(f.grid.lat[k / f.grid.n_lon()]) + ", lon " +
                             io::fmt(f.grid.lon[k % f.grid.n_lon()]) + ")");
      for (std::size_t t = 0; t < f.n_time(); ++t) {
        auto idx = f.index(c, t, k);
        if (!f.mask[idx]) s.field.values[idx] = (f.values[idx] - m) / sd;
      }
      // second pass removes the residual rounding in the mean
      double r = 0.0;
      for (std::size_t t = 0; t < f.n_time(); ++t)
        if (!f.missing(c, t, k)) r += s.field.at(c, t, k);
      r /= static_cast<double>(n);
      double v2 = 0.0;
      for (std::size_t t = 0; t < f.n_time(); ++t)
        if (!f.missing(c, t, k)) {
          auto& x = s.field.at(c, t, k);
          x -= r;
          v2 += x * x;
        }
      double sc = std::sqrt(v2 / static_cast<double>(n));
      for (std::size_t t = 0; t < f.n_time(); ++t)
        if (!f.missing(c, t, k)) s.field.at(c, t, k) /= sc;
      s.mean[c * f.n_cells() + k] = m + r * sd;
      s.sd[c * f.n_cells() + k] = sd * sc;
    }
  return s;
}

struct Window {
  std::size_t t0 = 0, t1 = 0;  // [t0, t1)
  std::size_t lat0 = 0, lat1 = 0;
  std::size_t lon0 = 0, lon1 = 0;
  std::size_t length() const { return t1 - t0; }
};

struct Partition {
  std::vector<Window> members;
  std::size_t stride = 1;
};

struct PartitionScheme {
  std::size_t min_window = 2;
  std::vector<std::pair<std::size_t, std::size_t>> boxes;  // (n_lat, n_lon); 0 = full axis
  std::size_t cap = 10000;
  bool allow_coarsening = true;
};

inline Window whole(const Field& f) { return {0, f.n_time(), 0, f.grid.n_lat(), 0, f.grid.n_lon()}; }

inline Partition enumerate_partitions(const Field& f, const PartitionScheme& scheme) {
  std::size_t nt = f.n_time();
  if (scheme.min_window < 1) throw UsageError("partition minimum window must be at least 1");
  if (scheme.min_window > nt) throw UsageError("partition minimum window exceeds record length");
  std::vector<std::pair<std::size_t, std::size_t>> boxes = scheme.boxes;
  if (boxes.empty()) boxes.push_back({0, 0});
  for (std::size_t stride = 1;; stride *= 2) {
    std::vector<std::size_t> marks;
    for (std::size_t b = 0; b < nt; b += stride) marks.push_back(b);
    marks.push_back(nt);
    std::vector<std::pair<std::size_t, std::size_t>> tw;
    for (std::size_t a = 0; a < marks.size(); ++a)
      for (std::size_t b = a + 1; b < marks.size(); ++b)
        if (marks[b] - marks[a] >= scheme.min_window) tw.push_back({marks[a], marks[b]});
    std::vector<Window> sp;
    for (auto [h, w] : boxes) {
      std::size_t H = h ? h : f.grid.n_lat(), W = w ? w : f.grid.n_lon();
      if (H > f.grid.n_lat() || W > f.grid.n_lon()) throw UsageError("partition box larger than grid");
      for (std::size_t i = 0; i + H <= f.grid.n_lat(); i += stride)
        for (std::size_t j = 0; j + W <= f.grid.n_lon(); j += stride) sp.push_back({0, 0, i, i + H, j, j + W});
    }
    std::size_t count = tw.size() * sp.size();
    if (count == 0) throw UsageError("partition scheme yields no members");
    if (count <= scheme.cap) {
      Partition p;
      p.stride = stride;
      for (auto [a, b] : tw)
        for (auto w : sp) {
          w.t0 = a;
          w.t1 = b;
          p.members.push_back(w);
        }
      return p;
    }
    if (!scheme.allow_coarsening) throw UsageError("partition count " + std::to_string(count) + " exceeds cap " + std::to_string(scheme.cap));
    if (stride > nt) throw UsageError("partition cap cannot be met by coarsening");
  }
}

inline Field subset(const Field& f, const Window& w) {
  if (w.t1 <= w.t0 || w.lat1 <= w.lat0 || w.lon1 <= w.lon0 || w.t1 > f.n_time() || w.lat1 > f.grid.n_lat() ||
      w.lon1 > f.grid.n_lon())
    throw UsageError("empty or out-of-range window");
  std::vector<double> la(f.grid.lat.begin() + w.lat0, f.grid.lat.begin() + w.lat1);
  std::vector<double> lo(f.grid.lon.begin() + w.lon0, f.grid.lon.begin() + w.lon1);
  TimeAxis ta;
  ta.t.assign(f.time.t.begin() + w.t0, f.time.t.begin() + w.t1);
  ta.step = f.time.step;
  Grid g;
  g.lat = la;
  g.lon = lo;
  if (la.size() >= 2 && lo.size() >= 2) {
    g = Grid::make(la, lo);
  } else {
    g.weights.assign(la.size() * lo.size(), 1.0 / static_cast<double>(la.size() * lo.size()));
  }
  Field out(g, ta, f.n_comp);
  for (std::size_t c = 0; c < f.n_comp; ++c)
    for (std::size_t t = w.t0; t < w.t1; ++t)
      for (std::size_t i = w.lat0; i < w.lat1; ++i)
        for (std::size_t j = w.lon0; j < w.lon1; ++j) {
          auto src = f.index(c, t, i, j);
          auto dst = out.index(c, t - w.t0, i - w.lat0, j - w.lon0);
          out.values[dst] = f.values[src];
          out.mask[dst] = f.mask[src];
        }
  return out;
}

}  // namespace dsa
