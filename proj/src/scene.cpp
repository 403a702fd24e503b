#include "bridgecond/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bridgecond {

const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> kPalette = {
      {"red", 0.85, 0.12, 0.12},   {"green", 0.13, 0.65, 0.22}, {"blue", 0.15, 0.25, 0.85},
      {"yellow", 0.92, 0.85, 0.14}, {"purple", 0.60, 0.20, 0.70}, {"cyan", 0.15, 0.75, 0.80},
      {"orange", 0.95, 0.55, 0.10}, {"white", 0.95, 0.95, 0.95},  {"gray", 0.50, 0.50, 0.50},
      {"black", 0.08, 0.08, 0.08},
  };
  return kPalette;
}

namespace {

double color_dist2(int a, int b) {
  const auto& p = palette();
  const double dr = p[a].r - p[b].r, dg = p[a].g - p[b].g, db = p[a].b - p[b].b;
  return dr * dr + dg * dg + db * db;
}

// horizontal reach of a shape from its center
double reach_x(const PlacedShape& s) {
  return s.kind == ShapeKind::Triangle ? 1.1547 * s.size : s.size;
}
double reach_y(const PlacedShape& s) { return s.size; }

}  // namespace

bool shape_contains(const PlacedShape& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  switch (s.kind) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s.size * s.size;
    case ShapeKind::Square:
      return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
    case ShapeKind::Triangle:
      // upward-pointing, apex at cy-size, base at cy+size
      return dy >= -s.size && dy <= s.size && std::abs(dx) <= (dy + s.size) * 0.57735026919;
  }
  return false;
}

namespace {

// topmost shape index containing the point, or -1
int top_shape_at(const SceneSpec& scene, double px, double py) {
  int best = -1, best_z = -1;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    if (scene.shapes[i].z > best_z && shape_contains(scene.shapes[i], px, py)) {
      best = static_cast<int>(i);
      best_z = scene.shapes[i].z;
    }
  }
  return best;
}

SceneSpec try_gen_scene(std::uint64_t seed, std::uint64_t attempt, int size) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + attempt + 1);
  SceneSpec scene;
  scene.seed = seed;
  scene.bg_color_id = static_cast<int>(rng.uniform_int(palette().size()));
  const int n_shapes = 1 + static_cast<int>(rng.uniform_int(4));
  for (int i = 0; i < n_shapes; ++i) {
    PlacedShape s;
    for (int tries = 0; tries < 64; ++tries) {
      s.kind = static_cast<ShapeKind>(rng.uniform_int(3));
      s.color_id = static_cast<int>(rng.uniform_int(palette().size()));
      if (color_dist2(s.color_id, scene.bg_color_id) < 0.3) continue;
      bool dup = false;
      for (const auto& other : scene.shapes)
        dup = dup || (other.kind == s.kind && other.color_id == s.color_id);
      if (dup) continue;
      s.size = rng.uniform(3.5, 7.0);
      const double rx = reach_x(s), ry = reach_y(s);
      s.cx = rng.uniform(1.0 + rx, size - 1.0 - rx);
      s.cy = rng.uniform(1.0 + ry, size - 1.0 - ry);
      s.z = i;
      scene.shapes.push_back(s);
      break;
    }
  }
  return scene;
}

bool all_shapes_visible(const SceneSpec& scene, int size) {
  if (scene.shapes.empty()) return false;
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const Mask alone = shape_mask_alone(scene.shapes[i], size);
    const Mask vis = shape_mask_visible(scene, static_cast<int>(i), size);
    if (alone.count() == 0) return false;
    const double frac = static_cast<double>(vis.count()) / static_cast<double>(alone.count());
    if (frac < 0.2) return false;  // mostly hidden shapes make captions useless
  }
  return true;
}

}  // namespace

SceneSpec gen_scene(std::uint64_t seed, int size) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SceneSpec scene = try_gen_scene(seed, attempt, size);
    if (all_shapes_visible(scene, size)) return scene;
  }
}

RasterImage render_scene(const SceneSpec& scene, int size) {
  const int ss = 4;  // supersampling grid per pixel side
  RasterImage img(size, size);
  const auto& pal = palette();
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double r = 0, g = 0, b = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss;
          const double py = y + (sy + 0.5) / ss;
          const int top = top_shape_at(scene, px, py);
          const PaletteColor& c = top < 0 ? pal[scene.bg_color_id] : pal[scene.shapes[top].color_id];
          r += c.r;
          g += c.g;
          b += c.b;
        }
      }
      const double inv = 1.0 / (ss * ss);
      img.at(x, y, 0) = r * inv;
      img.at(x, y, 1) = g * inv;
      img.at(x, y, 2) = b * inv;
    }
  }
  return img;
}

Mask shape_mask_alone(const PlacedShape& s, int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (shape_contains(s, x + 0.5, y + 0.5)) m.at(x, y) = 1;
  return m;
}

Mask shape_mask_visible(const SceneSpec& scene, int index, int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (top_shape_at(scene, x + 0.5, y + 0.5) == index) m.at(x, y) = 1;
  return m;
}

std::string region_name(double cx, double cy, int size) {
  const double third = size / 3.0;
  const int col = cx < third ? 0 : (cx < 2 * third ? 1 : 2);
  const int row = cy < third ? 0 : (cy < 2 * third ? 1 : 2);
  static const char* kNames[3][3] = {{"top left", "top", "top right"},
                                     {"left", "center", "right"},
                                     {"bottom left", "bottom", "bottom right"}};
  return kNames[row][col];
}

std::string size_word(double size) {
  if (size < 4.8) return "small";
  if (size < 6.2) return "medium";
  return "large";
}

std::vector<ObjectRecord> extract_objects(const SceneSpec& scene) {
  std::vector<ObjectRecord> records;
  const auto& pal = palette();
  for (std::size_t i = 0; i < scene.shapes.size(); ++i) {
    const PlacedShape& s = scene.shapes[i];
    ObjectRecord rec;
    rec.object_index = static_cast<int>(i);
    rec.simple_caption = std::string(pal[s.color_id].name) + " " + shape_kind_name(s.kind);
    rec.detailed_caption = std::string("a ") + shape_kind_name(s.kind) + " near the " +
                           region_name(s.cx, s.cy) + " of the image, colored " +
                           pal[s.color_id].name + ", " + size_word(s.size);
    records.push_back(std::move(rec));
  }
  return records;
}

std::string global_caption(const SceneSpec& scene) {
  static const char* kCount[] = {"zero", "one", "two", "three", "four"};
  std::string out = "a scene with ";
  out += kCount[std::min<std::size_t>(scene.shapes.size(), 4)];
  out += scene.shapes.size() == 1 ? " shape on a " : " shapes on a ";
  out += palette()[scene.bg_color_id].name;
  out += " background";
  return out;
}

std::vector<ObjectRecord> gen_masks(const SceneSpec& scene, std::vector<ObjectRecord> records,
                                    double tau_conf, int size) {
  if (tau_conf < 0.0 || tau_conf > 1.0)
    throw std::invalid_argument("gen_masks: tau_conf must lie in [0,1]");
  std::vector<ObjectRecord> kept;
  for (auto& rec : records) {
    const Mask alone = shape_mask_alone(scene.shapes[rec.object_index], size);
    rec.mask = shape_mask_visible(scene, rec.object_index, size);
    rec.confidence =
        alone.count() ? static_cast<double>(rec.mask.count()) / static_cast<double>(alone.count()) : 0.0;
    if (rec.confidence >= tau_conf && rec.mask.count() > 0) kept.push_back(std::move(rec));
  }
  return kept;
}

Mask morph_dilate(const Mask& m, int radius) {
  if (radius < 1) throw std::invalid_argument("morph_dilate: radius must be >= 1");
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dy = -radius; dy <= radius && !v; ++dy)
        for (int dx = -radius; dx <= radius && !v; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < m.width && ny < m.height && m.at(nx, ny)) v = 1;
        }
      out.at(x, y) = v;
    }
  return out;
}

Mask morph_erode(const Mask& m, int radius) {
  if (radius < 1) throw std::invalid_argument("morph_erode: radius must be >= 1");
  Mask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 1;
      for (int dy = -radius; dy <= radius && v; ++dy)
        for (int dx = -radius; dx <= radius && v; ++dx) {
          const int nx = x + dx, ny = y + dy;
          // out-of-frame neighbors count as foreground
          if (nx >= 0 && ny >= 0 && nx < m.width && ny < m.height && !m.at(nx, ny)) v = 0;
        }
      out.at(x, y) = v;
    }
  return out;
}

Mask morph_close(const Mask& m, int radius) {
  return morph_erode(morph_dilate(m, radius), radius);
}

std::string SceneSpec::to_json() const {
  std::ostringstream os;
  os << "{\"seed\":" << seed << ",\"background\":\"" << palette()[bg_color_id].name
     << "\",\"shapes\":[";
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    if (i) os << ",";
    os << "{\"kind\":\"" << shape_kind_name(s.kind) << "\",\"color\":\"" << palette()[s.color_id].name
       << "\",\"cx\":" << s.cx << ",\"cy\":" << s.cy << ",\"size\":" << s.size << ",\"z\":" << s.z
       << "}";
  }
  os << "]}";
  return os.str();
}

}  // namespace bridgecond
