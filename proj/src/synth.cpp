#include "aunet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>

namespace aunet {

namespace fs = std::filesystem;

const Landmarks& canonical_landmarks() {
  static const Landmarks lmk = [] {
    Landmarks l{};
    // jaw 0-16: half ellipse, temple to temple through the chin
    for (int i = 0; i <= 16; ++i) {
      const double t = M_PI * i / 16.0;
      l[i] = {128.0 - 80.0 * std::cos(t), 110.0 + 102.0 * std::sin(t)};
    }
    // brows 17-26
    const double bx[5] = {62, 74, 86, 98, 110};
    const double by[5] = {94, 89, 86, 86, 89};
    for (int i = 0; i < 5; ++i) {
      l[17 + i] = {bx[i], by[i]};
      l[26 - i] = {256.0 - bx[i], by[i]};
    }
    // nose bridge 27-30 and base 31-35
    for (int i = 0; i < 4; ++i) l[27 + i] = {128, 100.0 + 12.0 * i};
    const double nx[5] = {112, 120, 128, 136, 144};
    const double ny[5] = {148, 151, 153, 151, 148};
    for (int i = 0; i < 5; ++i) l[31 + i] = {nx[i], ny[i]};
    // eyes 36-47
    const double ex[6] = {76, 86, 96, 106, 96, 86};
    const double ey[6] = {108, 103, 103, 108, 113, 113};
    for (int i = 0; i < 6; ++i) l[36 + i] = {ex[i], ey[i]};
    // right eye mirrors the left with corner order reversed (42 inner)
    const int mirror[6] = {3, 2, 1, 0, 5, 4};
    for (int i = 0; i < 6; ++i)
      l[42 + i] = {256.0 - ex[mirror[i]], ey[mirror[i]]};
    // outer lips 48-59
    const double ox[12] = {98, 108, 118, 128, 138, 148, 158, 148, 138, 128, 118, 108};
    const double oy[12] = {172, 166, 162, 160, 162, 166, 172, 180, 185, 187, 185, 180};
    for (int i = 0; i < 12; ++i) l[48 + i] = {ox[i], oy[i]};
    // inner lips 60-67
    const double ix[8] = {106, 118, 128, 138, 150, 138, 128, 118};
    const double iy[8] = {172, 169, 168, 169, 172, 176, 177, 176};
    for (int i = 0; i < 8; ++i) l[60 + i] = {ix[i], iy[i]};
    return l;
  }();
  return lmk;
}

const std::vector<AUDeformation>& au_deformations(int au_id) {
  static const std::map<int, std::vector<AUDeformation>> table = {
      {1, {{21, 0, -1}, {22, 0, -1}, {20, 0, -0.6}, {23, 0, -0.6}}},
      {2, {{18, 0, -1}, {25, 0, -1}, {17, 0, -0.6}, {19, 0, -0.6},
           {24, 0, -0.6}, {26, 0, -0.6}}},
      {4, {{21, 0.3, 0.8}, {22, -0.3, 0.8}, {20, 0, 0.5}, {23, 0, 0.5}}},
      {5, {{37, 0, -0.8}, {38, 0, -0.8}, {43, 0, -0.8}, {44, 0, -0.8}}},
      {6, {{41, 0, -0.6}, {46, 0, -0.6}, {40, 0, -0.6}, {47, 0, -0.6},
           {1, 0.3, -0.3}, {15, -0.3, -0.3}}},
      {9, {{31, 0.2, -0.8}, {35, -0.2, -0.8}, {33, 0, -0.5}}},
      {10, {{50, 0, -1}, {51, 0, -1}, {52, 0, -1}, {61, 0, -0.6},
            {62, 0, -0.6}, {63, 0, -0.6}}},
      {12, {{48, -0.8, -0.8}, {54, 0.8, -0.8}}},
      {14, {{48, -1, 0.15}, {54, 1, 0.15}, {60, -0.5, 0}, {64, 0.5, 0}}},
      {15, {{48, -0.3, 0.9}, {54, 0.3, 0.9}, {60, -0.2, 0.5}, {64, 0.2, 0.5}}},
      {17, {{8, 0, -0.8}, {56, 0, -0.7}, {57, 0, -0.7}, {58, 0, -0.7},
            {66, 0, -0.4}}},
      {20, {{48, -1, 0.2}, {54, 1, 0.2}, {49, -0.6, 0.1}, {59, -0.6, 0.1},
            {53, 0.6, 0.1}, {55, 0.6, 0.1}}},
      {25, {{61, 0, -0.5}, {62, 0, -0.5}, {63, 0, -0.5}, {65, 0, 0.5},
            {66, 0, 0.5}, {67, 0, 0.5}}},
      {26, {{8, 0, 0.8}, {7, 0, 0.6}, {9, 0, 0.6}, {56, 0, 0.7}, {57, 0, 0.7},
            {58, 0, 0.7}, {65, 0, 0.7}, {66, 0, 0.7}, {67, 0, 0.7},
            {55, 0, 0.5}, {59, 0, 0.5}}},
  };
  auto it = table.find(au_id);
  if (it == table.end())
    throw std::invalid_argument("au_deformations: no rule for AU " +
                                std::to_string(au_id));
  return it->second;
}

namespace {

cv::Point2d pt(const Vec2& v) { return {v.x, v.y}; }

std::vector<cv::Point> poly(const Landmarks& l, int from, int count) {
  std::vector<cv::Point> p;
  for (int i = 0; i < count; ++i)
    p.emplace_back(cv::Point(static_cast<int>(std::lround(l[from + i].x)),
                             static_cast<int>(std::lround(l[from + i].y))));
  return p;
}

}  // namespace

FrameSample synth_frame(const SynthFaceParams& params) {
  if (params.au_ids.size() != params.au_vector.size())
    throw std::invalid_argument("synth_frame: au_ids/au_vector mismatch");
  for (double a : params.au_vector)
    if (!(a >= 0 && a <= 5))
      throw std::invalid_argument("synth_frame: intensity out of [0,5]");

  Landmarks lmk = canonical_landmarks();
  for (std::size_t j = 0; j < params.au_ids.size(); ++j) {
    const double level = params.au_vector[j];
    if (level == 0) continue;
    for (const AUDeformation& d : au_deformations(params.au_ids[j])) {
      lmk[d.landmark].x += kLevelStepPx * level * d.dx;
      lmk[d.landmark].y += kLevelStepPx * level * d.dy;
    }
  }

  // pose: yaw squashes x about the face axis, roll rotates about the centre
  const double cx = 128.0, cy = 132.0;
  const double cy_yaw = std::cos(params.yaw_deg * M_PI / 180.0);
  const double cr = std::cos(params.roll_deg * M_PI / 180.0);
  const double sr = std::sin(params.roll_deg * M_PI / 180.0);
  for (auto& p : lmk) {
    const double x = (p.x - cx) * cy_yaw;
    const double y = p.y - cy;
    p = {cx + cr * x - sr * y, cy + sr * x + cr * y};
  }

  std::mt19937_64 rng(params.appearance_seed);
  std::uniform_int_distribution<int> tone(0, 60);
  const cv::Scalar bg(90 + tone(rng), 100 + tone(rng), 95 + tone(rng));
  const int skin_base = 150 + tone(rng);
  const cv::Scalar skin(skin_base - 30, skin_base + 5, skin_base + 35);
  const cv::Scalar dark(40, 35, 35);
  const cv::Scalar lip(70, 60, 150);

  cv::Mat img(kSynthImageSize, kSynthImageSize, CV_8UC3, bg);

  // face region: jaw contour closed over the forehead
  std::vector<cv::Point> face = poly(lmk, 0, 17);
  const double fh = 70.0 * cr;
  face.emplace_back(cv::Point(static_cast<int>(lmk[16].x + 70.0 * sr),
                              static_cast<int>(lmk[16].y - fh)));
  face.emplace_back(cv::Point(static_cast<int>(lmk[0].x + 70.0 * sr),
                              static_cast<int>(lmk[0].y - fh)));
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{face}, skin);

  // AU 6 cheek shading: darkness and extent grow with intensity
  for (std::size_t j = 0; j < params.au_ids.size(); ++j) {
    if (params.au_ids[j] != 6 || params.au_vector[j] == 0) continue;
    const double lv = params.au_vector[j];
    for (int side = 0; side < 2; ++side) {
      const Vec2& eye = side == 0 ? lmk[41] : lmk[46];
      const Vec2& nose = side == 0 ? lmk[31] : lmk[35];
      const cv::Point c(static_cast<int>(0.5 * (eye.x + nose.x)),
                        static_cast<int>(0.5 * (eye.y + nose.y) + 6));
      const int r = static_cast<int>(6 + 2 * lv);
      cv::Scalar shade(skin.val[0] - 12 * lv, skin.val[1] - 12 * lv,
                       skin.val[2] - 6 * lv);
      cv::ellipse(img, c, {r, static_cast<int>(r * 0.7)}, params.roll_deg, 0,
                  360, shade, cv::FILLED, cv::LINE_AA);
    }
  }

  // brows
  cv::polylines(img, poly(lmk, 17, 5), false, dark, 4, cv::LINE_AA);
  cv::polylines(img, poly(lmk, 22, 5), false, dark, 4, cv::LINE_AA);
  // eyes
  for (int e = 0; e < 2; ++e) {
    auto eye = poly(lmk, 36 + 6 * e, 6);
    cv::fillPoly(img, std::vector<std::vector<cv::Point>>{eye},
                 cv::Scalar(245, 245, 245));
    cv::polylines(img, eye, true, dark, 1, cv::LINE_AA);
    cv::Point c(0, 0);
    for (const auto& p : eye) c += p;
    c.x /= 6;
    c.y /= 6;
    cv::circle(img, c, 3, dark, cv::FILLED, cv::LINE_AA);
  }
  // nose
  cv::line(img, pt(lmk[27]), pt(lmk[30]), dark, 2, cv::LINE_AA);
  cv::polylines(img, poly(lmk, 31, 5), false, dark, 2, cv::LINE_AA);
  // mouth: outer lips, then the inner gap
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(lmk, 48, 12)}, lip);
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{poly(lmk, 60, 8)},
               cv::Scalar(25, 20, 30));

  FrameSample s;
  s.image = img;
  s.landmarks = lmk;
  s.label = params.au_vector;
  return s;
}

// ---------------------------------------------------------------------------
// dataset writing / loading

std::vector<std::size_t> DatasetManifest::split_indices(
    const std::string& split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].split == split || split.empty()) idx.push_back(i);
  return idx;
}

FrameSample DatasetManifest::load(std::size_t row) const {
  const ManifestRow& r = rows.at(row);
  FrameSample s;
  const fs::path base(base_dir);
  s.image = cv::imread((base / r.image_path).string(), cv::IMREAD_COLOR);
  if (s.image.empty())
    throw std::runtime_error("cannot read image: " + r.image_path);
  s.landmarks = read_landmark_file((base / r.landmark_path).string());
  s.label = r.label;
  s.id = r.id;
  return s;
}

std::uint64_t DatasetManifest::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& r : rows) {
    h = fnv1a(r.image_path.data(), r.image_path.size(), h);
    h = fnv1a(r.label.data(), r.label.size() * sizeof(double), h);
  }
  return h;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest: " + path);
  f << "frame_path,lmk_path,split";
  for (int au : m.active_aus) f << ",au" << au;
  f << "\n";
  for (const auto& r : m.rows) {
    f << r.image_path << "," << r.landmark_path << "," << r.split;
    for (double v : r.label) f << "," << v;
    f << "\n";
  }
}

DatasetManifest synth_dataset(int n_frames, const std::vector<int>& au_list,
                              std::uint64_t seed, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "landmarks");
  DatasetManifest m;
  m.base_dir = out_dir;
  m.active_aus = au_list;
  for (int i = 0; i < n_frames; ++i) {
    std::mt19937_64 rng(fnv1a(&i, sizeof i, seed ^ 0x9e3779b97f4a7c15ULL));
    SynthFaceParams p;
    p.au_ids = au_list;
    std::uniform_real_distribution<double> u01(0, 1);
    std::uniform_int_distribution<int> level(1, 5);
    for (std::size_t j = 0; j < au_list.size(); ++j)
      p.au_vector.push_back(u01(rng) < 0.5 ? 0.0 : level(rng));
    p.yaw_deg = std::uniform_real_distribution<double>(-40, 40)(rng);
    p.roll_deg = std::uniform_real_distribution<double>(-10, 10)(rng);
    p.appearance_seed = rng();
    FrameSample s = synth_frame(p);

    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    ManifestRow row;
    row.id = name;
    row.image_path = std::string("images/") + name + ".png";
    row.landmark_path = std::string("landmarks/") + name + ".txt";
    row.split = i < n_frames * 70 / 100   ? "train"
                : i < n_frames * 85 / 100 ? "val"
                                          : "test";
    row.label = p.au_vector;
    cv::imwrite((fs::path(out_dir) / row.image_path).string(), s.image);
    write_landmark_file((fs::path(out_dir) / row.landmark_path).string(),
                        s.landmarks);
    m.rows.push_back(std::move(row));
  }
  write_manifest(m, (fs::path(out_dir) / "manifest.csv").string());
  return m;
}

DatasetManifest load_real(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f)
    throw std::runtime_error("cannot open manifest: " + manifest_path);
  DatasetManifest m;
  m.base_dir = fs::path(manifest_path).parent_path().string();
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("empty manifest: " + manifest_path);
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  if (cols.size() < 3 || cols[0] != "frame_path" || cols[1] != "lmk_path")
    throw std::runtime_error("malformed manifest header: " + line);
  std::size_t first_au = 2;
  const bool has_split = cols.size() > 2 && cols[2] == "split";
  if (has_split) first_au = 3;
  for (std::size_t i = first_au; i < cols.size(); ++i) {
    if (cols[i].rfind("au", 0) != 0)
      throw std::runtime_error("malformed AU column: " + cols[i]);
    m.active_aus.push_back(std::stoi(cols[i].substr(2)));
  }

  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> vals;
    while (std::getline(ss, tok, ',')) vals.push_back(tok);
    if (vals.size() != cols.size())
      throw std::runtime_error("malformed manifest row at line " +
                               std::to_string(line_no));
    ManifestRow row;
    row.image_path = vals[0];
    row.landmark_path = vals[1];
    row.split = has_split ? vals[2] : "train";
    row.id = fs::path(vals[0]).stem().string();
    try {
      for (std::size_t i = first_au; i < vals.size(); ++i)
        row.label.push_back(std::stod(vals[i]));
    } catch (const std::exception&) {
      throw std::runtime_error("malformed label at line " +
                               std::to_string(line_no));
    }
    for (double& v : row.label) {
      if (v < 0 || v > 5) {
        v = std::clamp(v, 0.0, 5.0);
        ++m.clipped_labels;
      }
    }
    if (!fs::exists(fs::path(m.base_dir) / row.landmark_path)) {
      ++m.skipped_frames;
      continue;
    }
    m.rows.push_back(std::move(row));
  }
  return m;
}

}  // namespace aunet
