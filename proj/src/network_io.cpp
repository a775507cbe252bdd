#include "vasoperf/errors.hpp"
#include "vasoperf/network.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace vasoperf {

const char* to_string(BcType t) {
  switch (t) {
    case BcType::none:
      return "none";
    case BcType::pressure:
      return "pressure";
    case BcType::noflux:
      return "noflux";
  }
  return "none";
}

BcType parse_bc_type(const std::string& s) {
  if (s == "none") return BcType::none;
  if (s == "pressure") return BcType::pressure;
  if (s == "noflux") return BcType::noflux;
  throw ConfigError("unknown bc_type '" + s + "'");
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError(where + ": cannot parse number '" + s + "'");
  return v;
}

long to_long(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw ConfigError(where + ": cannot parse integer '" + s + "'");
  return v;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  return out;
}

}  // namespace

void write_network_csv(const VesselNetwork& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto nodes = open_out(dir / "nodes.csv");
  nodes << "id,x,y,z,bc_type,bc_value\n";
  for (const auto& n : net.nodes())
    nodes << n.id << ',' << fmt17(n.position.x()) << ',' << fmt17(n.position.y()) << ',' << fmt17(n.position.z()) << ','
          << to_string(n.bc.type) << ',' << fmt17(n.bc.value) << '\n';
  auto segs = open_out(dir / "segments.csv");
  segs << "id,node_a,node_b,radius\n";
  for (const auto& s : net.segments()) segs << s.id << ',' << s.node_a << ',' << s.node_b << ',' << fmt17(s.radius) << '\n';
}

VesselNetwork read_network_csv(const std::filesystem::path& dir, double hematocrit) {
  std::vector<Vec3> pos;
  std::vector<NodeBc> bcs;
  {
    auto in = open_in(dir / "nodes.csv");
    std::string line;
    std::getline(in, line);
    if (split_csv(line) != std::vector<std::string>{"id", "x", "y", "z", "bc_type", "bc_value"})
      throw ConfigError("nodes.csv: unexpected header");
    long row = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      const auto f = split_csv(line);
      const std::string where = "nodes.csv row " + std::to_string(row + 1);
      if (f.size() != 6) throw ConfigError(where + ": expected 6 fields");
      if (to_long(f[0], where) != row) throw ConfigError(where + ": node ids must be dense and ordered from 0");
      pos.emplace_back(to_double(f[1], where), to_double(f[2], where), to_double(f[3], where));
      bcs.push_back({parse_bc_type(f[4]), to_double(f[5], where)});
      ++row;
    }
  }
  std::vector<SegmentSpec> segs;
  {
    auto in = open_in(dir / "segments.csv");
    std::string line;
    std::getline(in, line);
    if (split_csv(line) != std::vector<std::string>{"id", "node_a", "node_b", "radius"})
      throw ConfigError("segments.csv: unexpected header");
    long row = 0;
    while (std::getline(in, line)) {
      if (line.empty() || line == "\r") continue;
      const auto f = split_csv(line);
      const std::string where = "segments.csv row " + std::to_string(row + 1);
      if (f.size() != 4) throw ConfigError(where + ": expected 4 fields");
      if (to_long(f[0], where) != row) throw ConfigError(where + ": segment ids must be dense and ordered from 0");
      segs.push_back({static_cast<int>(to_long(f[1], where)), static_cast<int>(to_long(f[2], where)), to_double(f[3], where)});
      ++row;
    }
  }
  return VesselNetwork(std::move(pos), std::move(bcs), segs, hematocrit);
}

void write_partition_csv(const VesselNetwork& net, const std::filesystem::path& file) {
  if (!net.partition()) throw ContractError("write_partition_csv: network has no partition");
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  auto out = open_out(file);
  out << "segment,class\n";
  for (const auto& s : net.segments()) out << s.id << ',' << (net.is_large(s.id) ? "large" : "small") << '\n';
}

std::vector<VesselClass> read_partition_csv(const std::filesystem::path& file, std::size_t n_segments) {
  auto in = open_in(file);
  std::string line;
  std::getline(in, line);
  if (split_csv(line) != std::vector<std::string>{"segment", "class"}) throw ConfigError("partition file: unexpected header");
  std::vector<VesselClass> cls;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    const std::string where = "partition row " + std::to_string(cls.size() + 1);
    if (f.size() != 2) throw ConfigError(where + ": expected 2 fields");
    if (to_long(f[0], where) != static_cast<long>(cls.size())) throw ConfigError(where + ": segment ids must be ordered");
    if (f[1] == "large")
      cls.push_back(VesselClass::large);
    else if (f[1] == "small")
      cls.push_back(VesselClass::small);
    else
      throw ConfigError(where + ": class must be large or small");
  }
  if (cls.size() != n_segments) throw ConfigError("partition file covers " + std::to_string(cls.size()) + " of " +
                                                  std::to_string(n_segments) + " segments");
  return cls;
}

void write_network_vtk(const VesselNetwork& net, const std::filesystem::path& file,
                       const std::vector<NamedField>& node_fields, const std::vector<NamedField>& segment_fields) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  char buf[96];
  out << "# vtk DataFile Version 3.0\nvasoperf vessel network\nASCII\nDATASET POLYDATA\n";
  out << "POINTS " << net.n_nodes() << " double\n";
  for (const auto& n : net.nodes()) {
    std::snprintf(buf, sizeof buf, "%.10g %.10g %.10g\n", n.position.x(), n.position.y(), n.position.z());
    out << buf;
  }
  out << "LINES " << net.n_segments() << ' ' << 3 * net.n_segments() << '\n';
  for (const auto& s : net.segments()) out << "2 " << s.node_a << ' ' << s.node_b << '\n';
  auto scalars = [&](const std::string& name, const std::vector<double>& f, std::size_t n) {
    if (f.size() != n) throw ContractError("write_network_vtk: field '" + name + "' size mismatch");
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (double v : f) {
      std::snprintf(buf, sizeof buf, "%.10g\n", v);
      out << buf;
    }
  };
  out << "CELL_DATA " << net.n_segments() << '\n';
  std::vector<double> radius, cls;
  for (const auto& s : net.segments()) {
    radius.push_back(s.radius);
    cls.push_back(net.partition() ? (net.is_large(s.id) ? 1.0 : 0.0) : -1.0);
  }
  scalars("radius", radius, net.n_segments());
  scalars("large", cls, net.n_segments());
  for (const auto& [name, f] : segment_fields) scalars(name, f, net.n_segments());
  if (!node_fields.empty()) out << "POINT_DATA " << net.n_nodes() << '\n';
  for (const auto& [name, f] : node_fields) scalars(name, f, net.n_nodes());
}

}  // namespace vasoperf
