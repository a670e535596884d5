#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pulseprobe/engine.hpp"
#include "pulseprobe/error.hpp"
#include "pulseprobe/frameset.hpp"
#include "pulseprobe/simulator.hpp"

namespace pulseprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- hashing -------------------------------------------------------------------

inline std::string to_hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = digits[d[i] >> 4];
    s[2 * i + 1] = digits[d[i] & 15];
  }
  return s;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error(ErrorKind::Io, "SHA-256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error(ErrorKind::Io, "SHA-256 update failed");
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error(ErrorKind::Io, "SHA-256 final failed");
    return to_hex(md, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256(const std::string& bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

inline std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

/// Hash over every regular file below `dir`: relative path and content hash, in
/// sorted path order.
inline std::string sha256_tree(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(f);
    h.update("\n");
    h.update(sha256_file(dir / f));
    h.update("\n");
  }
  return h.hex();
}

// ---- little-endian blobs ---------------------------------------------------------

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + p.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + p.string());
}

inline std::string encode_f32(const RealGrid& g) {
  std::string out;
  out.reserve(4 * g.size());
  for (double v : g) put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline RealGrid decode_f32(const std::string& bytes, std::size_t ny, std::size_t nx, const std::string& what) {
  if (bytes.size() != 4 * ny * nx)
    throw Error(ErrorKind::Input, what + ": expected " + std::to_string(4 * ny * nx) + " bytes, found " + std::to_string(bytes.size()));
  RealGrid g(ny, nx);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::bit_cast<float>(get_le<std::uint32_t>(&bytes[4 * i]));
  return g;
}

inline std::string encode_f64(const double* v, std::size_t n) {
  std::string out;
  out.reserve(8 * n);
  for (std::size_t i = 0; i < n; ++i) put_le(out, std::bit_cast<std::uint64_t>(v[i]));
  return out;
}

inline std::vector<double> decode_f64(const std::string& bytes, std::size_t n, const std::string& what) {
  if (bytes.size() != 8 * n)
    throw Error(ErrorKind::Input, what + ": expected " + std::to_string(8 * n) + " bytes, found " + std::to_string(bytes.size()));
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_le<std::uint64_t>(&bytes[8 * i]));
  return v;
}

/// Complex values as interleaved (re, im) float64.
inline std::string encode_c128(const cplx* v, std::size_t n) {
  return encode_f64(reinterpret_cast<const double*>(v), 2 * n);
}

inline std::vector<cplx> decode_c128(const std::string& bytes, std::size_t n, const std::string& what) {
  const auto d = decode_f64(bytes, 2 * n, what);
  std::vector<cplx> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {d[2 * i], d[2 * i + 1]};
  return out;
}

// ---- json helpers ---------------------------------------------------------------

inline json read_json(const fs::path& p) {
  const std::string text = read_bytes(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Input, p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_bytes(p, j.dump(2) + "\n"); }

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::Input, where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Input, where + ": bad value for '" + key + "'");
  }
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- positions table ------------------------------------------------------------

inline std::string positions_csv(const std::vector<PositionEstimate>& pos) {
  std::string s = "frame,nominal_x,nominal_y,coarse_x,coarse_y,refined_x,refined_y,status\n";
  auto opt = [](const std::optional<Vec2>& v, bool y) { return v ? format_double(y ? v->y : v->x) : std::string(); };
  for (const auto& p : pos) {
    s += std::to_string(p.frame_index) + ',' + format_double(p.nominal.x) + ',' + format_double(p.nominal.y) + ',' +
         opt(p.coarse, false) + ',' + opt(p.coarse, true) + ',' + opt(p.refined, false) + ',' + opt(p.refined, true) + ',' +
         to_string(p.status) + '\n';
  }
  return s;
}

inline std::vector<PositionEstimate> parse_positions_csv(const std::string& text, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame,", 0) != 0) throw Error(ErrorKind::Input, where + ": missing header");
  std::vector<PositionEstimate> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) throw Error(ErrorKind::Input, where + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " fields");
    try {
      auto num = [](const std::string& c) {
        std::size_t used = 0;
        const double v = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        return v;
      };
      auto opt = [&](std::size_t i) -> std::optional<Vec2> {
        if (cells[i].empty() && cells[i + 1].empty()) return std::nullopt;
        return Vec2{num(cells[i]), num(cells[i + 1])};
      };
      PositionEstimate p;
      p.frame_index = static_cast<std::size_t>(std::stoull(cells[0]));
      p.nominal = {num(cells[1]), num(cells[2])};
      p.coarse = opt(3);
      p.refined = opt(5);
      p.status = frame_status_from_string(cells[7]);
      out.push_back(p);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorKind::Input, where + ": unparsable row " + std::to_string(row));
    }
  }
  return out;
}

// ---- frame container ------------------------------------------------------------

/// Stage provenance embedded in every manifest.
struct Provenance {
  std::string stage;
  std::string config_hash;
  std::map<std::string, std::string> inputs;  // name -> sha256_tree of the input

  json to_json() const { return json{{"stage", stage}, {"config_hash", config_hash}, {"inputs", inputs}}; }
  static Provenance from_json(const json& j) {
    Provenance p;
    if (j.is_null()) return p;
    p.stage = j.value("stage", "");
    p.config_hash = j.value("config_hash", "");
    p.inputs = j.value("inputs", std::map<std::string, std::string>{});
    return p;
  }
};

struct FrameContainer {
  FrameSet frames;
  std::vector<PositionEstimate> positions;
  std::optional<IntensityFrame> dark;
  json geometry = json::object();
  Provenance provenance;
};

inline std::string frame_file(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frames/%06zu.f32", j);
  return buf;
}

/// Directory layout: manifest.json, frames/NNNNNN.f32 (little-endian float32,
/// row-major), positions.csv, optional mask.u8 and dark.f32.
inline void write_container(const fs::path& dir, const FrameContainer& c) {
  validate(c.frames);
  if (c.positions.size() != c.frames.size()) throw Error(ErrorKind::Input, "one position record per frame required");
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir / "frames", ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  const std::size_t ny = c.frames.ny(), nx = c.frames.nx();
  json frames = json::array();
  for (std::size_t j = 0; j < c.frames.size(); ++j) {
    const auto& f = c.frames.frames[j];
    write_bytes(dir / frame_file(j), encode_f32(f.counts));
    frames.push_back(json{{"file", frame_file(j)}, {"frame_index", f.frame_index},
                          {"nominal_position", {f.nominal_position.x, f.nominal_position.y}}});
  }
  json m{{"format", "pulseprobe-frames"}, {"version", 1},     {"count", c.frames.size()},
         {"ny", ny},                      {"nx", nx},          {"dtype", "float32"},
         {"endianness", "little"},        {"order", "row-major"},
         {"pixel_pitch", c.frames.frames.front().pitch},
         {"geometry", c.geometry},        {"frames", frames},  {"positions", "positions.csv"},
         {"provenance", c.provenance.to_json()}};
  if (!c.frames.mask.empty()) {
    std::string bytes(c.frames.mask.size(), '\0');
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(c.frames.mask[i] ? 1 : 0);
    write_bytes(dir / "mask.u8", bytes);
    m["mask"] = "mask.u8";
  }
  if (c.dark) {
    if (c.dark->ny() != ny || c.dark->nx() != nx) throw Error(ErrorKind::Shape, "dark frame shape differs from frames");
    write_bytes(dir / "dark.f32", encode_f32(c.dark->counts));
    m["dark"] = "dark.f32";
  }
  write_bytes(dir / "positions.csv", positions_csv(c.positions));
  write_json(dir / "manifest.json", m);
}

inline FrameContainer read_container(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp)) throw Error(ErrorKind::Io, "no frame container at " + dir.string());
  const json m = read_json(mp);
  const std::string where = mp.string();
  if (m.value("format", "") != "pulseprobe-frames") throw Error(ErrorKind::Input, where + ": not a frame container");
  if (m.value("dtype", "") != "float32" || m.value("endianness", "") != "little")
    throw Error(ErrorKind::Input, where + ": unsupported dtype or endianness");
  const auto n = field<std::size_t>(m, "count", where);
  const auto ny = field<std::size_t>(m, "ny", where);
  const auto nx = field<std::size_t>(m, "nx", where);
  const auto pitch = field<double>(m, "pixel_pitch", where);
  const json& list = m.at("frames");
  if (!list.is_array() || list.size() != n)
    throw Error(ErrorKind::Input, where + ": count " + std::to_string(n) + " does not match the frame list");

  FrameContainer c;
  c.frames.frames.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const json& e = list[j];
    const auto file = field<std::string>(e, "file", where);
    const fs::path fp = dir / file;
    if (!fs::exists(fp)) throw Error(ErrorKind::Io, "missing frame blob " + fp.string());
    IntensityFrame& f = c.frames.frames[j];
    f.counts = decode_f32(read_bytes(fp), ny, nx, fp.string());
    f.frame_index = field<std::size_t>(e, "frame_index", where);
    const auto np = field<std::vector<double>>(e, "nominal_position", where);
    if (np.size() != 2) throw Error(ErrorKind::Input, where + ": nominal_position needs two values");
    f.nominal_position = {np[0], np[1]};
    f.pitch = pitch;
  }
  if (m.contains("mask")) {
    const std::string bytes = read_bytes(dir / m.at("mask").get<std::string>());
    if (bytes.size() != ny * nx) throw Error(ErrorKind::Input, where + ": mask size mismatch");
    c.frames.mask = MaskGrid(ny, nx);
    for (std::size_t i = 0; i < bytes.size(); ++i) c.frames.mask[i] = bytes[i] ? 1 : 0;
  }
  if (m.contains("dark")) {
    IntensityFrame d;
    d.counts = decode_f32(read_bytes(dir / m.at("dark").get<std::string>()), ny, nx, "dark frame");
    d.pitch = pitch;
    c.dark = std::move(d);
  }
  const fs::path pp = dir / m.value("positions", "positions.csv");
  if (!fs::exists(pp)) throw Error(ErrorKind::Io, "missing positions table " + pp.string());
  c.positions = parse_positions_csv(read_bytes(pp), pp.string());
  if (c.positions.size() != n) throw Error(ErrorKind::Input, pp.string() + ": row count differs from frame count");
  c.geometry = m.value("geometry", json::object());
  c.provenance = Provenance::from_json(m.value("provenance", json()));
  return c;
}

// ---- position sets ----------------------------------------------------------------

inline void write_positions(const fs::path& dir, const std::vector<PositionEstimate>& pos, const json& summary,
                            const Provenance& prov) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  write_bytes(dir / "positions.csv", positions_csv(pos));
  write_json(dir / "manifest.json", json{{"format", "pulseprobe-positions"}, {"version", 1}, {"count", pos.size()},
                                         {"summary", summary}, {"provenance", prov.to_json()}});
}

inline std::vector<PositionEstimate> read_positions(const fs::path& dir) {
  const fs::path p = dir / "positions.csv";
  if (!fs::exists(p)) throw Error(ErrorKind::Io, "missing positions table " + p.string());
  return parse_positions_csv(read_bytes(p), p.string());
}

// ---- checkpoint -----------------------------------------------------------------

/// ReconState on disk: manifest.json plus float64 little-endian blobs (object and
/// components as interleaved complex, singular values, error history) and the
/// positions table.
inline void write_checkpoint(const fs::path& dir, const ReconState& s, const Provenance& prov) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  const auto& b = s.basis;
  write_bytes(dir / "object.c128", encode_c128(s.object.values.data(), s.object.values.size()));
  write_bytes(dir / "components.c128", encode_c128(b.M.data(), static_cast<std::size_t>(b.M.size())));
  write_bytes(dir / "vhat.c128", encode_c128(b.Vhat.data(), static_cast<std::size_t>(b.Vhat.size())));
  write_bytes(dir / "sigma.f64", encode_f64(b.sigma.data(), static_cast<std::size_t>(b.sigma.size())));
  write_bytes(dir / "errors.f64", encode_f64(s.errors.data(), s.errors.size()));
  write_bytes(dir / "positions.csv", positions_csv(s.positions));
  json m{{"format", "pulseprobe-checkpoint"},
         {"version", 1},
         {"dtype", "float64"},
         {"endianness", "little"},
         {"object", {{"file", "object.c128"}, {"ny", s.object.ny()}, {"nx", s.object.nx()}, {"pitch", s.object.pitch},
                     {"wavelength", s.object.wavelength}, {"center", {s.object_center.x, s.object_center.y}}}},
         {"basis", {{"components", "components.c128"}, {"vhat", "vhat.c128"}, {"sigma", "sigma.f64"},
                    {"ny", b.ny}, {"nx", b.nx}, {"rank", b.rank()}, {"frames", b.count()}, {"pitch", b.pitch},
                    {"wavelength", b.wavelength}, {"order", "column-major"}}},
         {"errors", {{"file", "errors.f64"}, {"count", s.errors.size()}}},
         {"iteration", s.iteration},
         {"dm_iterations", s.dm_iterations},
         {"ml_converged", s.ml_converged},
         {"positions", "positions.csv"},
         {"provenance", prov.to_json()}};
  write_json(dir / "manifest.json", m);
}

inline ReconState read_checkpoint(const fs::path& dir, Provenance* prov = nullptr) {
  const fs::path mp = dir / "manifest.json";
  if (!fs::exists(mp)) throw Error(ErrorKind::Io, "no checkpoint at " + dir.string());
  const json m = read_json(mp);
  const std::string where = mp.string();
  if (m.value("format", "") != "pulseprobe-checkpoint") throw Error(ErrorKind::Input, where + ": not a checkpoint");
  try {
    ReconState s;
    const json& o = m.at("object");
    const auto ony = o.at("ny").get<std::size_t>(), onx = o.at("nx").get<std::size_t>();
    s.object = make_field(ony, onx, o.at("pitch").get<double>(), o.at("wavelength").get<double>());
    const auto ov = decode_c128(read_bytes(dir / o.at("file").get<std::string>()), ony * onx, "object");
    std::copy(ov.begin(), ov.end(), s.object.values.begin());
    const auto c = o.at("center").get<std::vector<double>>();
    s.object_center = {c.at(0), c.at(1)};

    const json& b = m.at("basis");
    auto& B = s.basis;
    B.ny = b.at("ny").get<std::size_t>();
    B.nx = b.at("nx").get<std::size_t>();
    B.pitch = b.at("pitch").get<double>();
    B.wavelength = b.at("wavelength").get<double>();
    const auto k = b.at("rank").get<std::size_t>(), n = b.at("frames").get<std::size_t>();
    const auto mv = decode_c128(read_bytes(dir / b.at("components").get<std::string>()), B.ny * B.nx * k, "components");
    const auto vv = decode_c128(read_bytes(dir / b.at("vhat").get<std::string>()), n * k, "vhat");
    const auto sv = decode_f64(read_bytes(dir / b.at("sigma").get<std::string>()), k, "sigma");
    B.M = Eigen::Map<const Eigen::MatrixXcd>(mv.data(), static_cast<Eigen::Index>(B.ny * B.nx), static_cast<Eigen::Index>(k));
    B.Vhat = Eigen::Map<const Eigen::MatrixXcd>(vv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    B.sigma = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(k));

    const json& e = m.at("errors");
    s.errors = decode_f64(read_bytes(dir / e.at("file").get<std::string>()), e.at("count").get<std::size_t>(), "errors");
    s.iteration = m.at("iteration").get<std::size_t>();
    s.dm_iterations = m.at("dm_iterations").get<std::size_t>();
    s.ml_converged = m.at("ml_converged").get<bool>();
    s.positions = read_positions(dir);
    if (s.positions.size() != n) throw Error(ErrorKind::Input, where + ": positions and coefficients disagree");
    if (prov) *prov = Provenance::from_json(m.value("provenance", json()));
    return s;
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Input, where + ": " + ex.what());
  }
}

// ---- ground truth sidecar ---------------------------------------------------------

/// Truth of a simulated run: truth.json (positions, pulse draws, star), the object and
/// the base modes as interleaved complex float64.
inline void write_truth(const fs::path& dir, const Truth& t) {
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());
  write_bytes(dir / "object.c128", encode_c128(t.object.values.data(), t.object.values.size()));
  std::string modes;
  for (const auto& m : t.modes) modes += encode_c128(m.values.data(), m.values.size());
  write_bytes(dir / "modes.c128", modes);
  json frames = json::array();
  for (std::size_t j = 0; j < t.positions.size(); ++j) {
    json coeff = json::array();
    for (const auto& c : t.pulses[j].coefficients) coeff.push_back({c.real(), c.imag()});
    frames.push_back(json{{"position", {t.positions[j].x, t.positions[j].y}},
                          {"offset", {t.pulses[j].offset.x, t.pulses[j].offset.y}},
                          {"energy", t.pulses[j].energy},
                          {"off_sample", t.off_sample[j] != 0},
                          {"coefficients", coeff}});
  }
  const WaveField& m0 = t.modes.front();
  json j{{"format", "pulseprobe-truth"},
         {"version", 1},
         {"object", {{"file", "object.c128"}, {"ny", t.object.ny()}, {"nx", t.object.nx()}, {"pitch", t.object.pitch},
                     {"wavelength", t.object.wavelength}, {"center", {t.object_center.x, t.object_center.y}}}},
         {"modes", {{"file", "modes.c128"}, {"count", t.modes.size()}, {"n", m0.ny()}, {"pitch", m0.pitch}}},
         {"star", {{"n_spokes", t.star.n_spokes}, {"outer_radius", t.star.outer_radius}, {"inner_radius", t.star.inner_radius}}},
         {"frames", frames}};
  write_json(dir / "truth.json", j);
}

inline Truth read_truth(const fs::path& dir) {
  const fs::path p = dir / "truth.json";
  if (!fs::exists(p)) throw Error(ErrorKind::Io, "no truth sidecar at " + dir.string());
  const json j = read_json(p);
  try {
    Truth t;
    const json& o = j.at("object");
    const auto ony = o.at("ny").get<std::size_t>(), onx = o.at("nx").get<std::size_t>();
    t.object = make_field(ony, onx, o.at("pitch").get<double>(), o.at("wavelength").get<double>());
    const auto ov = decode_c128(read_bytes(dir / o.at("file").get<std::string>()), ony * onx, "truth object");
    std::copy(ov.begin(), ov.end(), t.object.values.begin());
    const auto c = o.at("center").get<std::vector<double>>();
    t.object_center = {c.at(0), c.at(1)};
    const json& md = j.at("modes");
    const auto k = md.at("count").get<std::size_t>(), n = md.at("n").get<std::size_t>();
    const auto mv = decode_c128(read_bytes(dir / md.at("file").get<std::string>()), k * n * n, "truth modes");
    for (std::size_t i = 0; i < k; ++i) {
      WaveField f = make_field(n, n, md.at("pitch").get<double>(), t.object.wavelength);
      std::copy(mv.begin() + static_cast<std::ptrdiff_t>(i * n * n), mv.begin() + static_cast<std::ptrdiff_t>((i + 1) * n * n),
                f.values.begin());
      t.modes.push_back(std::move(f));
    }
    const json& st = j.at("star");
    t.star.n_spokes = st.at("n_spokes").get<std::size_t>();
    t.star.outer_radius = st.at("outer_radius").get<double>();
    t.star.inner_radius = st.at("inner_radius").get<double>();
    for (const json& f : j.at("frames")) {
      const auto pos = f.at("position").get<std::vector<double>>();
      const auto off = f.at("offset").get<std::vector<double>>();
      PulseDraw d;
      d.offset = {off.at(0), off.at(1)};
      d.energy = f.at("energy").get<double>();
      for (const json& cc : f.at("coefficients")) d.coefficients.emplace_back(cc.at(0).get<double>(), cc.at(1).get<double>());
      t.positions.push_back({pos.at(0), pos.at(1)});
      t.pulses.push_back(std::move(d));
      t.off_sample.push_back(f.at("off_sample").get<bool>() ? 1 : 0);
    }
    return t;
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Input, p.string() + ": " + ex.what());
  }
}

}  // namespace pulseprobe
