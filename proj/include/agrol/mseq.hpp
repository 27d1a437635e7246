#pragma once

// MSEQ motion container, little-endian:
//   "MSEQ" | u32 version | u32 fps | u32 frames | u32 channels
//   | frames*channels f32 (row-major)
//   | u32 track_count | per track: 4-byte tag | u32 channels | frames*channels f32

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "agrol/errors.hpp"
#include "agrol/numerics.hpp"

namespace agrol {

inline constexpr std::uint32_t kMseqVersion = 1;
inline constexpr std::array<char, 4> kMseqMagic = {'M', 'S', 'E', 'Q'};

struct MseqTrack {
  std::string tag; // exactly 4 characters, e.g. "ROOT", "HEAD"
  Tensor data;     // frames x channels

  bool operator==(const MseqTrack&) const = default;
};

struct MseqFile {
  std::uint32_t fps = 60;
  Tensor motion; // frames x channels
  std::vector<MseqTrack> tracks;

  [[nodiscard]] const MseqTrack* find(const std::string& tag) const {
    for (const auto& t : tracks) {
      if (t.tag == tag) return &t;
    }
    return nullptr;
  }

  bool operator==(const MseqFile&) const = default;
};

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffULL));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32s(std::ostream& out, std::span<const float> values) {
  for (const float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw TruncatedError(std::string("truncated file while reading ") + what);
  }
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  get_bytes(in, reinterpret_cast<char*>(b), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& in, const char* what) {
  const std::uint64_t lo = get_u32(in, what);
  const std::uint64_t hi = get_u32(in, what);
  return lo | (hi << 32);
}

inline Tensor get_tensor(std::istream& in, std::uint32_t rows, std::uint32_t cols,
                         const char* what) {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> raw(n * 4);
  get_bytes(in, reinterpret_cast<char*>(raw.data()), raw.size(), what);
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* b = raw.data() + 4 * i;
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    values[i] = std::bit_cast<float>(u);
  }
  return Tensor(rows, cols, std::move(values));
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) {
    throw FormatError(std::string(what) + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

} // namespace io

inline void write_mseq(std::ostream& out, const MseqFile& file) {
  const std::size_t frames = file.motion.rows();
  out.write(kMseqMagic.data(), 4);
  io::put_u32(out, kMseqVersion);
  io::put_u32(out, file.fps);
  io::put_u32(out, io::checked_u32(frames, "frame count"));
  io::put_u32(out, io::checked_u32(file.motion.cols(), "channel count"));
  io::put_f32s(out, file.motion.span());
  io::put_u32(out, io::checked_u32(file.tracks.size(), "track count"));
  for (const auto& t : file.tracks) {
    if (t.tag.size() != 4) {
      throw FormatError("track tag must be 4 characters: '" + t.tag + "'");
    }
    if (t.data.rows() != frames) {
      throw FormatError("track " + t.tag + " length differs from the motion");
    }
    out.write(t.tag.data(), 4);
    io::put_u32(out, io::checked_u32(t.data.cols(), "track channels"));
    io::put_f32s(out, t.data.span());
  }
  if (!out) {
    throw FormatError("failed writing MSEQ stream");
  }
}

inline MseqFile read_mseq(std::istream& in) {
  std::array<char, 4> magic{};
  io::get_bytes(in, magic.data(), 4, "magic");
  if (magic != kMseqMagic) {
    throw BadMagicError("not an MSEQ file (bad magic)");
  }
  const std::uint32_t version = io::get_u32(in, "version");
  if (version != kMseqVersion) {
    throw VersionError("unsupported MSEQ version " + std::to_string(version));
  }
  MseqFile file;
  file.fps = io::get_u32(in, "fps");
  const std::uint32_t frames = io::get_u32(in, "frame count");
  const std::uint32_t channels = io::get_u32(in, "channel count");
  file.motion = io::get_tensor(in, frames, channels, "motion payload");
  const std::uint32_t tracks = io::get_u32(in, "track count");
  for (std::uint32_t k = 0; k < tracks; ++k) {
    MseqTrack t;
    t.tag.resize(4);
    io::get_bytes(in, t.tag.data(), 4, "track tag");
    const std::uint32_t c = io::get_u32(in, "track channels");
    t.data = io::get_tensor(in, frames, c, "track payload");
    file.tracks.push_back(std::move(t));
  }
  return file;
}

inline void save_mseq(const std::string& path, const MseqFile& file) {
  std::ostringstream buf;
  write_mseq(buf, file);
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

inline MseqFile load_mseq(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  return read_mseq(in);
}

} // namespace agrol
