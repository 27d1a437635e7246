#pragma once

// Model checkpoint container, little-endian:
//   "AGRL" | u32 version
//   | u32 kind, num_blocks, latent_dim, seq_len, in_dim, out_dim, embed_dim, timestep_mode
//   | u32 predict_noise | u32 diffusion_steps | u64 iteration
//   | u32 param_count | per param: u32 name_len, name, u32 rows, u32 cols, rows*cols f32
//   | u32 has_optimizer
//   | [u32 optimizer kind | u64 step_count | f64 lr, beta1, beta2, eps, weight_decay
//   |  | per param: first moment then second moment, as rows*cols f32]

#include <array>
#include <bit>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "agrol/errors.hpp"
#include "agrol/mseq.hpp"
#include "agrol/network.hpp"
#include "agrol/optimizer.hpp"

namespace agrol {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 4> kCheckpointMagic = {'A', 'G', 'R', 'L'};

struct Checkpoint {
  ModelParams<float> model;
  bool predict_noise = false;
  std::size_t diffusion_steps = 0;
  std::uint64_t iteration = 0;
  std::optional<OptimizerState<float>> optimizer;
};

namespace io {

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_u64(in, what));
}

} // namespace io

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const MlpConfig& c = ck.model.config;
  out.write(kCheckpointMagic.data(), 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(c.kind));
  for (const std::size_t v : {c.num_blocks, c.latent_dim, c.seq_len, c.in_dim, c.out_dim,
                              c.embed_dim}) {
    io::put_u32(out, io::checked_u32(v, "model dimension"));
  }
  io::put_u32(out, static_cast<std::uint32_t>(c.timestep_mode));
  io::put_u32(out, ck.predict_noise ? 1u : 0u);
  io::put_u32(out, io::checked_u32(ck.diffusion_steps, "diffusion steps"));
  io::put_u64(out, ck.iteration);

  std::uint32_t count = 0;
  ck.model.visit([&](const Param<float>&) { ++count; });
  io::put_u32(out, count);
  ck.model.visit([&](const Param<float>& p) {
    io::put_u32(out, io::checked_u32(p.name.size(), "parameter name"));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    io::put_u32(out, io::checked_u32(p.value.rows(), "parameter rows"));
    io::put_u32(out, io::checked_u32(p.value.cols(), "parameter cols"));
    io::put_f32s(out, p.value.span());
  });

  io::put_u32(out, ck.optimizer ? 1u : 0u);
  if (ck.optimizer) {
    const OptimizerState<float>& o = *ck.optimizer;
    if (!o.first_moment.empty() && o.first_moment.size() != count) {
      throw FormatError("optimizer state does not match the parameter list");
    }
    io::put_u32(out, static_cast<std::uint32_t>(o.kind));
    io::put_u64(out, static_cast<std::uint64_t>(o.step_count));
    for (const double v : {o.lr, o.beta1, o.beta2, o.eps, o.weight_decay}) io::put_f64(out, v);
    io::put_u32(out, o.first_moment.empty() ? 0u : 1u);
    for (std::size_t i = 0; i < o.first_moment.size(); ++i) {
      io::put_f32s(out, o.first_moment[i].span());
      io::put_f32s(out, o.second_moment[i].span());
    }
  }
  if (!out) {
    throw FormatError("failed writing checkpoint stream");
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  io::get_bytes(in, magic.data(), 4, "magic");
  if (magic != kCheckpointMagic) {
    throw BadMagicError("not an AGRL checkpoint (bad magic)");
  }
  const std::uint32_t version = io::get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  MlpConfig c;
  const std::uint32_t kind = io::get_u32(in, "model kind");
  if (kind > 1) throw FormatError("unknown model kind " + std::to_string(kind));
  c.kind = static_cast<ModelKind>(kind);
  c.num_blocks = io::get_u32(in, "num_blocks");
  c.latent_dim = io::get_u32(in, "latent_dim");
  c.seq_len = io::get_u32(in, "seq_len");
  c.in_dim = io::get_u32(in, "in_dim");
  c.out_dim = io::get_u32(in, "out_dim");
  c.embed_dim = io::get_u32(in, "embed_dim");
  const std::uint32_t mode = io::get_u32(in, "timestep_mode");
  if (mode > 3) throw FormatError("unknown timestep mode " + std::to_string(mode));
  c.timestep_mode = static_cast<TimestepMode>(mode);

  Checkpoint ck;
  ck.model = make_params<float>(c);
  ck.predict_noise = io::get_u32(in, "predict_noise") != 0;
  ck.diffusion_steps = io::get_u32(in, "diffusion steps");
  ck.iteration = io::get_u64(in, "iteration");

  const auto params = ck.model.parameters();
  const std::uint32_t count = io::get_u32(in, "parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, config expects " +
                      std::to_string(params.size()));
  }
  for (Param<float>* p : params) {
    const std::uint32_t len = io::get_u32(in, "parameter name length");
    if (len > 4096) throw FormatError("parameter name too long");
    std::string name(len, '\0');
    io::get_bytes(in, name.data(), len, "parameter name");
    if (name != p->name) {
      throw FormatError("checkpoint parameter '" + name + "' where '" + p->name + "' expected");
    }
    const std::uint32_t rows = io::get_u32(in, "parameter rows");
    const std::uint32_t cols = io::get_u32(in, "parameter cols");
    if (rows != p->value.rows() || cols != p->value.cols()) {
      throw FormatError("checkpoint parameter '" + name + "' has the wrong shape");
    }
    p->value = io::get_tensor(in, rows, cols, "parameter payload");
  }
  ck.model.zero_grad();

  if (io::get_u32(in, "optimizer flag") != 0) {
    OptimizerState<float> o;
    const std::uint32_t okind = io::get_u32(in, "optimizer kind");
    if (okind > 1) throw FormatError("unknown optimizer kind");
    o.kind = static_cast<OptimizerKind>(okind);
    o.step_count = static_cast<std::int64_t>(io::get_u64(in, "optimizer steps"));
    o.lr = io::get_f64(in, "lr");
    o.beta1 = io::get_f64(in, "beta1");
    o.beta2 = io::get_f64(in, "beta2");
    o.eps = io::get_f64(in, "eps");
    o.weight_decay = io::get_f64(in, "weight decay");
    if (io::get_u32(in, "moment flag") != 0) {
      for (const Param<float>* p : params) {
        const auto r = static_cast<std::uint32_t>(p->value.rows());
        const auto k = static_cast<std::uint32_t>(p->value.cols());
        o.first_moment.push_back(io::get_tensor(in, r, k, "first moment"));
        o.second_moment.push_back(io::get_tensor(in, r, k, "second moment"));
      }
    }
    ck.optimizer = std::move(o);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream buf;
  write_checkpoint(buf, ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing");
  }
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("failed writing " + path);
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  return read_checkpoint(in);
}

} // namespace agrol
