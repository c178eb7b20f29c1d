#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpseg/pnm.hpp"
#include "qpseg/rng.hpp"
#include "qpseg/tensor.hpp"

namespace qpseg {

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;  // row-major class indices

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

struct LabeledImage {
  Tensor image;  // [C,H,W], values in [0,1]
  LabelMap labels;
  std::size_t num_classes = 0;

  std::size_t height() const { return labels.height; }
  std::size_t width() const { return labels.width; }
};

// Throws DataError when image and labels disagree or a label is >= num_classes.
void check_labeled_image(const LabeledImage& img);

struct PaletteClass {
  std::string name;
  std::array<std::uint8_t, 3> rgb;
};

struct ClassPalette {
  std::vector<PaletteClass> classes;
  std::optional<std::size_t> background;

  std::size_t size() const { return classes.size(); }
  std::optional<std::size_t> find(std::array<std::uint8_t, 3> rgb) const;
  void validate() const;
};

ClassPalette toy_palette();
ClassPalette facade_palette();

// {"classes":[{"name":..., "rgb":[r,g,b]}, ...], "background": index}
std::string palette_to_json(const ClassPalette& palette);
ClassPalette palette_from_json(const std::string& text);
ClassPalette load_palette(const std::string& path);
void save_palette(const ClassPalette& palette, const std::string& path);

// ---- generators -----------------------------------------------------------

/// Single-channel three-class image. Two rectangles (one per foreground class)
/// sit on a flat background: class 1 carries vertical stripes, class 2
/// horizontal stripes, both of period 4 and amplitude 0.8 over a background
/// level of 0.1, with uniform noise of +-0.05 everywhere.
LabeledImage gen_toy(std::uint64_t seed, std::size_t width, std::size_t height);

// Facade class indices.
namespace facade {
enum Class : std::uint8_t {
  Background = 0, Building, Road, Pavement, Sky, Vegetation, Window, Door, Car
};
inline constexpr std::size_t kNumClasses = 9;
}  // namespace facade

/// Three-channel street-scene stand-ins: sky band, building with a window grid
/// and a door, pavement and road strips, vegetation blobs, sometimes a car and
/// an unlabeled patch (class 0).
std::vector<LabeledImage> gen_facade_like(std::uint64_t seed, std::size_t width, std::size_t height,
                                          std::size_t num_images);

// ---- patches --------------------------------------------------------------

struct Patch {
  Tensor input;  // [C,patch,patch]
  std::uint8_t label;  // class of the centre pixel
  std::size_t center_y;
  std::size_t center_x;
};

// Uniformly positioned patch lying fully inside the image.
Patch sample_patch(const LabeledImage& img, std::size_t patch, Rng& rng);
// Patch centred at (cy, cx); no sampling.
Patch extract_patch(const LabeledImage& img, std::size_t patch, std::size_t cy, std::size_t cx);

// ---- files ----------------------------------------------------------------

struct UnknownColor {
  std::string file;
  std::array<std::uint8_t, 3> rgb;
  std::size_t pixels;
};

struct LoadReport {
  std::vector<UnknownColor> unknown_colors;
};

struct LoadedSet {
  std::vector<LabeledImage> images;
  std::vector<std::string> names;
  LoadReport report;
};

RawImage image_to_raw(const Tensor& image);
Tensor raw_to_image(const RawImage& raw);
// Raw class indices as grey values.
RawImage labels_to_pgm(const LabelMap& labels);
RawImage labels_to_ppm(const LabelMap& labels, const ClassPalette& palette);
LabelMap labels_from_raw(const RawImage& raw, const ClassPalette& palette, const std::string& file,
                         LoadReport& report);

enum class LabelEncoding { Indexed, Color };

// Writes <dir>/<name>.pgm|.ppm and <dir>/<name>_labels.pgm|.ppm.
void save_labeled(const LabeledImage& img, const std::string& dir, const std::string& name,
                  const ClassPalette& palette, LabelEncoding encoding);

/// Loads every <name>.ppm / <name>.pgm in `dir` (sorted by name) together with
/// <name>_labels.pgm (raw indices) or <name>_labels.ppm (palette colours).
/// Unknown label colours map to the palette's background class and are listed
/// in the report.
LoadedSet load_labeled_dir(const std::string& dir, const ClassPalette& palette);

}  // namespace qpseg
