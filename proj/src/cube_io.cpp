#include "higo/cube_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

namespace higo {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'H', 'G', 'C', '1'};

void append_f32(std::vector<uint8_t>& buf, float v) {
  uint8_t b[4];
  std::memcpy(b, &v, 4);
  buf.insert(buf.end(), b, b + 4);
}

float take_f32(const uint8_t*& p) {
  float v;
  std::memcpy(&v, p, 4);
  p += 4;
  return v;
}

void append_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t take_u32(const uint8_t*& p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  p += 4;
  return v;
}

}  // namespace

void write_cube(const std::string& path, const Dataset& ds) {
  json header = {
      {"H", ds.h},
      {"W", ds.w},
      {"C_x", ds.cx},
      {"C_z", ds.cz},
      {"K", ds.k},
      {"n_samples", ds.samples.size()},
      {"channel_names", ds.channel_names},
  };
  std::vector<int> times;
  for (const CubeSample& s : ds.samples) times.push_back(s.time_index);
  header["time_indices"] = times;
  std::string hs = header.dump();

  std::vector<uint8_t> payload;
  for (const CubeSample& s : ds.samples) {
    for (int i = 0; i < s.drivers.size(); ++i)
      append_f32(payload, static_cast<float>(s.drivers.data[i]));
    for (Eigen::Index i = 0; i < s.indices.size(); ++i)
      append_f32(payload, static_cast<float>(s.indices[i]));
    payload.insert(payload.end(), s.ba.begin(), s.ba.end());
  }
  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, payload.empty() ? Z_NULL : payload.data(), static_cast<uInt>(payload.size())));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_cube: cannot open " + path);
  out.write(kMagic, 4);
  std::vector<uint8_t> len;
  append_u32(len, static_cast<uint32_t>(hs.size()));
  out.write(reinterpret_cast<const char*>(len.data()), 4);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  std::vector<uint8_t> cb;
  append_u32(cb, crc);
  out.write(reinterpret_cast<const char*>(cb.data()), 4);
  if (!out) throw IoError("write_cube: write failed for " + path);
}

Dataset read_cube(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_cube: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw IoError("read_cube: truncated file");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("read_cube: bad magic");
  const uint8_t* p = bytes.data() + 4;
  uint32_t hlen = take_u32(p);
  if (8 + hlen + 4 > bytes.size()) throw IoError("read_cube: truncated header");
  json header;
  try {
    header = json::parse(std::string(reinterpret_cast<const char*>(p), hlen));
  } catch (const json::exception& e) {
    throw IoError(std::string("read_cube: malformed header: ") + e.what());
  }
  p += hlen;

  Dataset ds;
  ds.h = header.at("H").get<int>();
  ds.w = header.at("W").get<int>();
  ds.cx = header.at("C_x").get<int>();
  ds.cz = header.at("C_z").get<int>();
  ds.k = header.at("K").get<int>();
  ds.channel_names = header.at("channel_names").get<std::vector<std::string>>();
  size_t n_samples = header.at("n_samples").get<size_t>();
  std::vector<int> times = header.at("time_indices").get<std::vector<int>>();
  if (times.size() != n_samples) throw IoError("read_cube: time index count mismatch");

  size_t per_sample = static_cast<size_t>(ds.h) * ds.w * ds.cx * 4 +
                      static_cast<size_t>(ds.cz) * 4 + static_cast<size_t>(ds.h) * ds.w;
  size_t payload_size = per_sample * n_samples;
  if (8 + hlen + payload_size + 4 != bytes.size()) throw IoError("read_cube: truncated payload");

  uint32_t crc = static_cast<uint32_t>(
      crc32(0L, payload_size ? p : Z_NULL, static_cast<uInt>(payload_size)));
  const uint8_t* tail = p + payload_size;
  if (take_u32(tail) != crc) throw IoError("read_cube: checksum failure");

  for (size_t si = 0; si < n_samples; ++si) {
    CubeSample s;
    s.drivers = zeros({ds.h, ds.w, ds.cx});
    for (int i = 0; i < s.drivers.size(); ++i) s.drivers.data[i] = take_f32(p);
    s.indices = Vec(ds.cz);
    for (int i = 0; i < ds.cz; ++i) s.indices[i] = take_f32(p);
    s.ba.assign(p, p + static_cast<size_t>(ds.h) * ds.w);
    p += static_cast<size_t>(ds.h) * ds.w;
    for (uint8_t b : s.ba)
      if (b >= ds.k) throw IoError("read_cube: class out of range");
    s.time_index = times[si];
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace higo
