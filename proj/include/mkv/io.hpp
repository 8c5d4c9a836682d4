#pragma once

// Trajectory and residual-table persistence. CSV floats are written with 17
// significant digits so that a write/read cycle is lossless.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <system_error>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mkv/errors.hpp"
#include "mkv/simulate.hpp"
#include "mkv/theta.hpp"

namespace mkv::io {

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& text, const std::string& context) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IoError(context + ": cannot parse number '" + text + "'");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(sep, pos);
    out.push_back(line.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline void finish_write(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline nlohmann::json read_json(const std::string& path) {
  auto in = open_for_read(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_json(const std::string& path, const nlohmann::json& doc) {
  auto out = open_for_write(path);
  out << doc.dump(2) << '\n';
  finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Initial-condition specs: "normal:mean,var", "uniform:a,b", "point:x"

inline InitialCondition parse_initial_condition(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError("initial condition '" + text + "' needs a kind prefix");
  const std::string kind = text.substr(0, colon);
  const Theta args = parse_theta(text.substr(colon + 1));
  if (kind == "normal" && args.size() == 2) return InitialCondition::gaussian(args[0], args[1]);
  if (kind == "uniform" && args.size() == 2) return InitialCondition::uniform_box(args[0], args[1]);
  if (kind == "point") return InitialCondition::point_mass(args.to_vector());
  throw ValidationError("cannot parse initial condition '" + text + "' (normal:m,v | uniform:a,b | point:x)");
}

inline std::string to_string(const InitialCondition& ic) {
  switch (ic.kind) {
    case InitialCondition::Kind::normal: return "normal:" + format_double(ic.mean) + "," + format_double(ic.variance);
    case InitialCondition::Kind::uniform: return "uniform:" + format_double(ic.low) + "," + format_double(ic.high);
    case InitialCondition::Kind::point: {
      std::string s = "point:";
      for (std::size_t c = 0; c < ic.point.size(); ++c) s += (c ? "," : "") + format_double(ic.point[c]);
      return s;
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Trajectories: CSV (time, particle_id, x1..xd[, dw1..dwd]) + JSON sidecar

inline std::string sidecar_path(const std::string& csv_path) { return csv_path + ".json"; }

inline void write_trajectory(const std::string& path, const TrajectoryBatch& traj,
                             const std::optional<SimConfig>& cfg = std::nullopt) {
  auto out = open_for_write(path);
  const std::size_t d = traj.dim;
  out << "time,particle_id";
  for (std::size_t c = 0; c < d; ++c) out << ",x" << c + 1;
  if (traj.has_noise()) {
    for (std::size_t c = 0; c < d; ++c) out << ",dw" << c + 1;
  }
  out << '\n';
  const std::size_t k_max = traj.steps();
  for (std::size_t k = 0; k <= k_max; ++k) {
    for (std::size_t i = 0; i < traj.n_particles; ++i) {
      out << format_double(traj.times[k]) << ',' << i;
      for (std::size_t c = 0; c < d; ++c) out << ',' << format_double(traj.position(k, i, c));
      if (traj.has_noise()) {
        // the last frame has no increment after it
        for (std::size_t c = 0; c < d; ++c) {
          out << ',';
          if (k < k_max) out << format_double(traj.noise[(k * traj.n_particles + i) * d + c]);
        }
      }
      out << '\n';
    }
  }
  finish_write(out, path);

  nlohmann::json meta;
  meta["schema"] = 1;
  meta["model"] = traj.model_id;
  meta["sigma"] = traj.sigma;
  meta["theta_true"] = traj.theta_true.to_vector();
  meta["n_particles"] = traj.n_particles;
  meta["dim"] = traj.dim;
  meta["dt"] = traj.dt;
  meta["steps"] = k_max;
  meta["horizon"] = traj.horizon();
  meta["has_noise"] = traj.has_noise();
  if (cfg) {
    meta["sim"] = {{"n_particles", cfg->n_particles}, {"dt", cfg->dt},       {"horizon", cfg->horizon},
                   {"init", to_string(cfg->init)},    {"seed", cfg->seed},    {"record_noise", cfg->record_noise}};
  }
  write_json(sidecar_path(path), meta);
}

/// Reads a trajectory CSV. The sidecar, when present, supplies model identity,
/// sigma and theta_true; otherwise N and dt are inferred from the table.
inline TrajectoryBatch read_trajectory(const std::string& path) {
  auto in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  const auto header = split(line, ',');
  if (header.size() < 3 || header[0] != "time" || header[1] != "particle_id") {
    throw IoError("'" + path + "': header must start with time,particle_id,x1");
  }
  std::size_t d = 0;
  std::size_t noise_cols = 0;
  for (std::size_t h = 2; h < header.size(); ++h) {
    if (header[h] == "x" + std::to_string(d + 1) && noise_cols == 0) {
      ++d;
    } else if (header[h] == "dw" + std::to_string(noise_cols + 1)) {
      ++noise_cols;
    } else {
      throw IoError("'" + path + "': unexpected column '" + header[h] + "'");
    }
  }
  if (d == 0 || (noise_cols != 0 && noise_cols != d)) throw IoError("'" + path + "': malformed column set");

  TrajectoryBatch traj;
  traj.dim = d;
  std::vector<double> noise;
  std::size_t row = 0;
  std::size_t n = 0;
  std::size_t expected = 0;
  bool first_frame = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const std::string where = path + ":" + std::to_string(row + 1);
    const auto cells = split(line, ',');
    if (cells.size() != header.size()) throw IoError(where + ": expected " + std::to_string(header.size()) + " fields");
    const double t = parse_double(cells[0], where);
    std::size_t id = 0;
    const std::string& id_text = cells[1];
    const auto [end, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (ec != std::errc() || end != id_text.data() + id_text.size() || id_text.empty()) {
      throw IoError(where + ": particle_id '" + id_text + "' is not a non-negative integer");
    }
    if (id == 0) {
      if (!traj.times.empty()) {
        if (first_frame) n = expected;
        first_frame = false;
        if (expected != n) throw IoError(where + ": frame before this row has " + std::to_string(expected) + " particles");
      }
      traj.times.push_back(t);
      expected = 0;
    } else if (traj.times.empty() || t != traj.times.back()) {
      throw IoError(where + ": particle rows of one frame must share a time stamp");
    }
    if (id != expected) throw IoError(where + ": particle ids must run 0..N-1 within each frame");
    ++expected;
    for (std::size_t c = 0; c < d; ++c) traj.states.push_back(parse_double(cells[2 + c], where));
    for (std::size_t c = 0; c < noise_cols; ++c) {
      const std::string& cell = cells[2 + d + c];
      if (!cell.empty()) noise.push_back(parse_double(cell, where));
    }
  }
  if (traj.times.size() < 2) throw IoError("'" + path + "' holds fewer than two frames");
  if (expected != n) throw IoError("'" + path + "': last frame is incomplete");
  traj.n_particles = n;
  if (traj.states.size() != traj.times.size() * n * d) throw IoError("'" + path + "': ragged frames");
  if (noise_cols != 0) {
    if (noise.size() != (traj.times.size() - 1) * n * d) throw IoError("'" + path + "': noise columns incomplete");
    traj.noise = std::move(noise);
  }
  traj.dt = traj.times[1] - traj.times[0];

  std::ifstream probe(sidecar_path(path));
  if (probe) {
    const auto meta = read_json(sidecar_path(path));
    try {
      traj.model_id = meta.at("model").get<std::string>();
      traj.sigma = meta.at("sigma").get<double>();
      const auto theta = meta.at("theta_true").get<std::vector<double>>();
      if (!theta.empty()) traj.theta_true = Theta(std::span<const double>(theta));
      traj.dt = meta.at("dt").get<double>();
      if (meta.at("n_particles").get<std::size_t>() != n) throw IoError("sidecar N disagrees with the table");
    } catch (const nlohmann::json::exception& e) {
      throw IoError("'" + sidecar_path(path) + "': " + e.what());
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Residual tables: trial, comp1, comp2, ...

inline void write_residuals(const std::string& path, const std::vector<std::size_t>& trial,
                            const Eigen::MatrixXd& residuals) {
  if (trial.size() != static_cast<std::size_t>(residuals.rows())) {
    throw DimensionError("residual table: " + std::to_string(trial.size()) + " trial ids for " +
                         std::to_string(residuals.rows()) + " rows");
  }
  auto out = open_for_write(path);
  out << "trial";
  for (Eigen::Index c = 0; c < residuals.cols(); ++c) out << ",comp" << c + 1;
  out << '\n';
  for (Eigen::Index r = 0; r < residuals.rows(); ++r) {
    out << trial[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < residuals.cols(); ++c) out << ',' << format_double(residuals(r, c));
    out << '\n';
  }
  finish_write(out, path);
}

}  // namespace mkv::io
