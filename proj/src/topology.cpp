#include "aunet/topology.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aunet {

bool AUSpec::valid() const {
  if (left.empty() && right.empty() && centre.empty()) return false;
  if (left.empty() != right.empty()) return false;
  auto in_range = [](const std::vector<int>& v) {
    return std::all_of(v.begin(), v.end(),
                       [](int i) { return i >= 0 && i <= 67; });
  };
  return in_range(left) && in_range(right) && in_range(centre);
}

AUTopology::AUTopology(std::vector<AUSpec> specs,
                       std::array<int, 68> landmark_symmetry)
    : specs_(std::move(specs)), landmark_symmetry_(landmark_symmetry) {
  for (const auto& s : specs_)
    if (!s.valid())
      throw std::invalid_argument("AUTopology: invalid AU spec for AU " +
                                  std::to_string(s.au_id));
  for (int i = 0; i < 68; ++i) {
    const int j = landmark_symmetry_[i];
    if (j < 0 || j > 67 || landmark_symmetry_[j] != i)
      throw std::invalid_argument("AUTopology: symmetry map is not an involution");
  }
}

const AUSpec& AUTopology::spec(int au_id) const {
  return specs_.at(channel_of(au_id));
}

int AUTopology::channel_of(int au_id) const {
  for (std::size_t i = 0; i < specs_.size(); ++i)
    if (specs_[i].au_id == au_id) return static_cast<int>(i);
  throw std::out_of_range("AUTopology: unknown AU " + std::to_string(au_id));
}

AUTopology AUTopology::subset(const std::vector<int>& au_ids) const {
  std::vector<AUSpec> sel;
  for (const auto& s : specs_)
    if (std::find(au_ids.begin(), au_ids.end(), s.au_id) != au_ids.end())
      sel.push_back(s);
  if (sel.size() != au_ids.size())
    throw std::out_of_range("AUTopology::subset: unknown AU id in list");
  return AUTopology(std::move(sel), landmark_symmetry_);
}

std::vector<int> AUTopology::au_ids() const {
  std::vector<int> v;
  for (const auto& s : specs_) v.push_back(s.au_id);
  return v;
}

namespace {

std::string join(const std::vector<int>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_cell(std::string s) {
  s.erase(std::remove_if(s.begin(), s.end(), ::isspace), s.end());
  if (s.empty() || s == "-") return {};
  std::vector<int> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stoi(tok));
  return v;
}

}  // namespace

std::string AUTopology::serialize() const {
  std::string out;
  for (const auto& s : specs_)
    out += std::to_string(s.au_id) + "; " + join(s.left) + "; " +
           join(s.right) + "; " + join(s.centre) + "\n";
  return out;
}

AUTopology AUTopology::parse(const std::string& text) {
  std::vector<AUSpec> specs;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ls(line);
    std::string au, l, r, c;
    if (!std::getline(ls, au, ';') || !std::getline(ls, l, ';') ||
        !std::getline(ls, r, ';') || !std::getline(ls, c))
      throw std::invalid_argument("AUTopology::parse: malformed row: " + line);
    AUSpec s;
    s.au_id = std::stoi(au);
    s.left = parse_cell(l);
    s.right = parse_cell(r);
    s.centre = parse_cell(c);
    specs.push_back(std::move(s));
  }
  return AUTopology(std::move(specs), builtin_topology().landmark_symmetry());
}

std::uint64_t AUTopology::hash() const {
  const std::string s = serialize();
  return fnv1a(s.data(), s.size());
}

const AUTopology& builtin_topology() {
  static const AUTopology topo = [] {
    std::vector<AUSpec> specs = {
        {1, {21}, {22}, {21, 22, 27}},
        {2, {18}, {25}, {}},
        {4, {21}, {22}, {21, 22, 27}},
        {5, {37, 38}, {43, 44}, {}},
        {6, {1, 41, 31}, {15, 46, 35}, {}},
        {9, {31}, {35}, {28}},
        {10, {31}, {35}, {51}},
        {12, {48}, {54}, {}},
        {14, {48}, {54}, {}},
        {15, {48}, {54}, {}},
        {17, {57}, {8}, {}},
        {20, {48}, {54}, {51}},
        {25, {}, {}, {61, 64}},
        {26, {}, {}, {61, 64}},
    };
    std::array<int, 68> sym{};
    for (int i = 0; i < 68; ++i) sym[i] = i;
    auto pair = [&](int a, int b) {
      sym[a] = b;
      sym[b] = a;
    };
    for (int i = 0; i < 8; ++i) pair(i, 16 - i);          // jaw
    for (int i = 0; i < 5; ++i) pair(17 + i, 26 - i);     // brows
    pair(31, 35);
    pair(32, 34);                                          // nostrils
    pair(36, 45);
    pair(37, 44);
    pair(38, 43);
    pair(39, 42);
    pair(40, 47);
    pair(41, 46);                                          // eyes
    for (int i = 0; i < 3; ++i) pair(48 + i, 54 - i);     // outer lip top
    pair(55, 59);
    pair(56, 58);                                          // outer lip bottom
    pair(60, 64);
    pair(61, 63);                                          // inner lip top
    pair(65, 67);                                          // inner lip bottom
    return AUTopology(std::move(specs), sym);
  }();
  return topo;
}

namespace {
Vec2 centroid(const std::vector<int>& idx, const Landmarks& lmk) {
  Vec2 c;
  for (int i : idx) {
    c.x += lmk[i].x;
    c.y += lmk[i].y;
  }
  c.x /= idx.size();
  c.y /= idx.size();
  return c;
}
}  // namespace

AUPoints au_points(const Landmarks& landmarks, const AUTopology& topology) {
  for (const auto& p : landmarks)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("au_points: non-finite landmark");
  AUPoints out;
  out.reserve(topology.n_aus());
  for (const auto& s : topology.specs()) {
    AUPointSet ps;
    if (!s.left.empty()) ps.left = centroid(s.left, landmarks);
    if (!s.right.empty()) ps.right = centroid(s.right, landmarks);
    if (!s.centre.empty()) ps.centre = centroid(s.centre, landmarks);
    out.push_back(ps);
  }
  return out;
}

Landmarks flip_remap(const Landmarks& landmarks, double image_width,
                     const AUTopology& topology) {
  Landmarks out;
  for (int i = 0; i < 68; ++i) {
    const int j = topology.symmetric_landmark(i);
    out[i] = {image_width - 1.0 - landmarks[j].x, landmarks[j].y};
  }
  return out;
}

Landmarks read_landmark_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open landmark file: " + path);
  Landmarks lmk;
  for (int i = 0; i < 68; ++i)
    if (!(f >> lmk[i].x >> lmk[i].y))
      throw std::runtime_error("malformed landmark file (line " +
                               std::to_string(i + 1) + "): " + path);
  return lmk;
}

void write_landmark_file(const std::string& path, const Landmarks& lmk) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write landmark file: " + path);
  f.precision(10);
  for (const auto& p : lmk) f << p.x << " " << p.y << "\n";
}

}  // namespace aunet
