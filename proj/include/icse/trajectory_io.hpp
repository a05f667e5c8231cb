#pragma once

// Dataset container format, little-endian binary:
//   header  { magic "ICSE", version u32, n_traj u32, N u32, n_u u32,
//             n_y u32, n_x u32 }
//   per trajectory { seed u64, 19 x f64 params, N*n_u f64 inputs,
//                    N*n_x f64 clean states, N*n_y f64 outputs }, row-major.
// Doubles are written bit-exact; a read-back batch reproduces the serialized
// fields of the originals to the last bit.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "icse/process.hpp"

namespace icse {

static_assert(std::endian::native == std::endian::little,
              "trajectory files are little-endian; big-endian hosts unsupported");

inline constexpr std::uint32_t kTrajectoryFormatVersion = 1;
inline constexpr char kTrajectoryMagic[4] = {'I', 'C', 'S', 'E'};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw io_error("write failed");
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n,
                       const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw io_error(std::string("truncated trajectory file while reading ") + what);
  }
}

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  write_bytes(out, &v, sizeof(v));
}

inline std::uint32_t read_u32(std::ifstream& in, const char* what) {
  std::uint32_t v = 0;
  read_bytes(in, &v, sizeof(v), what);
  return v;
}

}  // namespace detail

inline void write_trajectory_batch(const std::filesystem::path& path,
                                   const std::vector<Trajectory>& batch) {
  const std::uint32_t n_traj = static_cast<std::uint32_t>(batch.size());
  const std::uint32_t N =
      batch.empty() ? 0u : static_cast<std::uint32_t>(batch.front().length());
  for (const Trajectory& t : batch) {
    if (t.length() != N) {
      throw io_error("write_trajectory_batch: all trajectories must share N");
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");

  detail::write_bytes(out, kTrajectoryMagic, 4);
  detail::write_u32(out, kTrajectoryFormatVersion);
  detail::write_u32(out, n_traj);
  detail::write_u32(out, N);
  detail::write_u32(out, 2);  // n_u
  detail::write_u32(out, 1);  // n_y
  detail::write_u32(out, 2);  // n_x

  for (const Trajectory& t : batch) {
    detail::write_bytes(out, &t.seed, sizeof(t.seed));
    const auto params = t.params.to_array();
    detail::write_bytes(out, params.data(), sizeof(double) * params.size());
    for (const SimInput& u : t.inputs) {
      const double row[2] = {u.u1, u.u2};
      detail::write_bytes(out, row, sizeof(row));
    }
    for (const SimState& x : t.clean_states) {
      const double row[2] = {x.x1, x.x2};
      detail::write_bytes(out, row, sizeof(row));
    }
    detail::write_bytes(out, t.outputs.data(), sizeof(double) * t.outputs.size());
  }
  out.flush();
  if (!out) throw io_error("flush failed for " + path.string());
}

inline std::vector<Trajectory> read_trajectory_batch(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());

  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kTrajectoryMagic, 4) != 0) {
    throw io_error("bad magic in " + path.string());
  }
  const std::uint32_t version = detail::read_u32(in, "version");
  if (version != kTrajectoryFormatVersion) {
    throw io_error("unsupported trajectory format version " +
                   std::to_string(version));
  }
  const std::uint32_t n_traj = detail::read_u32(in, "n_traj");
  const std::uint32_t N = detail::read_u32(in, "N");
  const std::uint32_t n_u = detail::read_u32(in, "n_u");
  const std::uint32_t n_y = detail::read_u32(in, "n_y");
  const std::uint32_t n_x = detail::read_u32(in, "n_x");
  if (n_u != 2 || n_y != 1 || n_x != 2) {
    throw io_error("unexpected signal dimensions in " + path.string());
  }

  std::vector<Trajectory> batch(n_traj);
  for (Trajectory& t : batch) {
    detail::read_bytes(in, &t.seed, sizeof(t.seed), "seed");
    std::array<double, ProcessParams::kCount> params{};
    detail::read_bytes(in, params.data(), sizeof(double) * params.size(),
                       "params");
    t.params = ProcessParams::from_array(params);
    t.inputs.resize(N);
    t.clean_states.resize(N);
    t.outputs.resize(N);
    for (SimInput& u : t.inputs) {
      double row[2];
      detail::read_bytes(in, row, sizeof(row), "inputs");
      u = SimInput{row[0], row[1]};
    }
    for (SimState& x : t.clean_states) {
      double row[2];
      detail::read_bytes(in, row, sizeof(row), "clean states");
      x = SimState{row[0], row[1]};
    }
    detail::read_bytes(in, t.outputs.data(), sizeof(double) * N, "outputs");
  }
  return batch;
}

// One CSV per trajectory for eyeballing; full round-trip precision.
inline void write_trajectory_csv(const std::filesystem::path& path,
                                 const Trajectory& t) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << "k,u1,u2,xo1,xo2,y\n";
  char line[256];
  for (std::size_t k = 0; k < t.length(); ++k) {
    std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", k,
                  t.inputs[k].u1, t.inputs[k].u2, t.clean_states[k].x1,
                  t.clean_states[k].x2, t.outputs[k]);
    out << line;
  }
  if (!out) throw io_error("write failed for " + path.string());
}

}  // namespace icse
