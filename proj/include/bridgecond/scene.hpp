#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bridgecond/image.hpp"
#include "bridgecond/rng.hpp"

namespace bridgecond {

enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

const char* shape_kind_name(ShapeKind k);

// Fixed palette; color names feed the caption grammar.
struct PaletteColor {
  const char* name;
  double r, g, b;
};
const std::vector<PaletteColor>& palette();

struct PlacedShape {
  ShapeKind kind = ShapeKind::Circle;
  int color_id = 0;
  double cx = 0, cy = 0;
  double size = 0;  // circle radius / square half-side / triangle half-height
  int z = 0;        // draw order, higher on top
};

// Deterministic synthetic scene: 1-4 flat shapes on a flat background, all
// fully inside the frame, every (color,kind) pair unique, shape colors kept
// away from the background color so objects are visible.
struct SceneSpec {
  std::uint64_t seed = 0;
  int bg_color_id = 0;
  std::vector<PlacedShape> shapes;

  std::string to_json() const;
};

struct ObjectRecord {
  int object_index = 0;
  std::string simple_caption;    // "<color> <kind>"
  std::string detailed_caption;  // from the detail grammar
  double confidence = 0.0;       // visible-area fraction
  Mask mask;                     // exact visible-pixel mask
};

SceneSpec gen_scene(std::uint64_t seed, int size = 32);

// 4x supersampled rendering, back-to-front.
RasterImage render_scene(const SceneSpec& scene, int size = 32);

// True if the point (in pixel units) lies inside the shape.
bool shape_contains(const PlacedShape& s, double px, double py);

// Exact pixel-center mask of a single shape, ignoring occlusion.
Mask shape_mask_alone(const PlacedShape& s, int size = 32);

// Visible-pixel mask (topmost-wins) of shape `index` within the scene.
Mask shape_mask_visible(const SceneSpec& scene, int index, int size = 32);

// One record per shape, captions from the closed grammar; no masks yet.
std::vector<ObjectRecord> extract_objects(const SceneSpec& scene);

std::string global_caption(const SceneSpec& scene);

// Region / size words used by the detailed-caption grammar.
std::string region_name(double cx, double cy, int size = 32);
std::string size_word(double size);

// Fills in masks and confidences, drops records below tau_conf.
std::vector<ObjectRecord> gen_masks(const SceneSpec& scene, std::vector<ObjectRecord> records,
                                    double tau_conf, int size = 32);

// Morphological closing: dilation then erosion with a square structuring
// element of side 2*radius+1. Outside the frame counts as background for
// dilation and as foreground for erosion, which keeps closing extensive at
// the image border.
Mask morph_dilate(const Mask& m, int radius);
Mask morph_erode(const Mask& m, int radius);
Mask morph_close(const Mask& m, int radius);

}  // namespace bridgecond
