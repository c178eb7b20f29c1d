#include "qpseg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "qpseg/errors.hpp"

namespace qpseg {

namespace fs = std::filesystem;

void check_labeled_image(const LabeledImage& img) {
  require_chw(img.image, "labeled image");
  if (img.image.dim(1) != img.labels.height || img.image.dim(2) != img.labels.width)
    throw DataError("labeled image: image is " + std::to_string(img.image.dim(1)) + "x" +
                    std::to_string(img.image.dim(2)) + " but labels are " + std::to_string(img.labels.height) +
                    "x" + std::to_string(img.labels.width));
  if (img.labels.values.size() != img.labels.height * img.labels.width)
    throw DataError("labeled image: label buffer size mismatch");
  for (auto v : img.labels.values)
    if (v >= img.num_classes)
      throw DataError("labeled image: label " + std::to_string(v) + " >= num_classes " +
                      std::to_string(img.num_classes));
}

// ---- palettes ---------------------------------------------------------------

std::optional<std::size_t> ClassPalette::find(std::array<std::uint8_t, 3> rgb) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i].rgb == rgb) return i;
  return std::nullopt;
}

void ClassPalette::validate() const {
  if (classes.empty()) throw FormatError("palette: no classes");
  if (classes.size() > 256) throw FormatError("palette: more than 256 classes");
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j)
      if (classes[i].rgb == classes[j].rgb)
        throw FormatError("palette: classes '" + classes[i].name + "' and '" + classes[j].name +
                          "' share a colour");
  if (background && *background >= classes.size())
    throw FormatError("palette: background index " + std::to_string(*background) + " out of range");
}

ClassPalette toy_palette() {
  return {{{"background", {0, 0, 0}}, {"vertical", {255, 0, 0}}, {"horizontal", {0, 255, 0}}}, 0};
}

ClassPalette facade_palette() {
  return {{{"background", {0, 0, 0}},
           {"building", {128, 0, 0}},
           {"road", {128, 64, 128}},
           {"pavement", {128, 128, 0}},
           {"sky", {0, 128, 255}},
           {"vegetation", {0, 128, 0}},
           {"window", {0, 0, 128}},
           {"door", {128, 128, 128}},
           {"car", {128, 0, 128}}},
          0};
}

std::string palette_to_json(const ClassPalette& palette) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : palette.classes) classes.push_back({{"name", c.name}, {"rgb", c.rgb}});
  nlohmann::json doc{{"classes", classes}};
  if (palette.background) doc["background"] = *palette.background;
  return doc.dump(2);
}

ClassPalette palette_from_json(const std::string& text) {
  ClassPalette p;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& c : doc.at("classes")) {
      const auto rgb = c.at("rgb");
      if (!rgb.is_array() || rgb.size() != 3) throw FormatError("palette: rgb must be [r,g,b]");
      PaletteClass pc;
      pc.name = c.at("name").get<std::string>();
      for (std::size_t i = 0; i < 3; ++i) {
        const int v = rgb[i].get<int>();
        if (v < 0 || v > 255) throw FormatError("palette: colour component out of 0..255");
        pc.rgb[i] = static_cast<std::uint8_t>(v);
      }
      p.classes.push_back(std::move(pc));
    }
    if (doc.contains("background") && !doc["background"].is_null())
      p.background = doc["background"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("palette: ") + e.what());
  }
  p.validate();
  return p;
}

ClassPalette load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open palette file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return palette_from_json(ss.str());
}

void save_palette(const ClassPalette& palette, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << palette_to_json(palette) << '\n';
}

// ---- toy --------------------------------------------------------------------

LabeledImage gen_toy(std::uint64_t seed, std::size_t width, std::size_t height) {
  if (width < 32 || height < 32)
    throw ParameterError("gen_toy: width and height must be >= 32, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  constexpr double kBackground = 0.1, kAmplitude = 0.8, kNoise = 0.05;
  constexpr std::size_t kPeriod = 4;

  Rng rng(derive_seed(seed, 0x70f));
  const auto rw = static_cast<std::size_t>(std::lround(0.33 * static_cast<double>(width)));
  const auto rh = static_cast<std::size_t>(std::lround(0.33 * static_cast<double>(height)));
  const std::size_t half = width / 2;
  // One rectangle per half, which side gets which class is random.
  const bool vertical_left = rng.below(2) == 0;
  const auto left_x = static_cast<std::size_t>(rng.range(1, static_cast<long>(half - rw - 1)));
  const auto right_x = static_cast<std::size_t>(rng.range(static_cast<long>(half + 1), static_cast<long>(width - rw - 1)));
  const auto left_y = static_cast<std::size_t>(rng.range(1, static_cast<long>(height - rh - 1)));
  const auto right_y = static_cast<std::size_t>(rng.range(1, static_cast<long>(height - rh - 1)));

  LabeledImage img{Tensor::chw(1, height, width), LabelMap{height, width, std::vector<std::uint8_t>(width * height, 0)}, 3};
  auto paint = [&](std::size_t x0, std::size_t y0, std::uint8_t cls) {
    for (std::size_t y = y0; y < y0 + rh; ++y)
      for (std::size_t x = x0; x < x0 + rw; ++x) img.labels.at(y, x) = cls;
  };
  paint(left_x, left_y, vertical_left ? 1 : 2);
  paint(right_x, right_y, vertical_left ? 2 : 1);

  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      double v = kBackground;
      const auto cls = img.labels.at(y, x);
      if (cls == 1 && x % kPeriod < kPeriod / 2) v += kAmplitude;
      if (cls == 2 && y % kPeriod < kPeriod / 2) v += kAmplitude;
      img.image.at(0, y, x) = v + rng.uniform(-kNoise, kNoise);
    }
  }
  return img;
}

// ---- facade -----------------------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

struct Canvas {
  LabeledImage& img;
  Rng& rng;

  void put(std::size_t y, std::size_t x, Rgb c, std::uint8_t cls, double noise) {
    img.image.at(0, y, x) = std::clamp(c.r + rng.uniform(-noise, noise), 0.0, 1.0);
    img.image.at(1, y, x) = std::clamp(c.g + rng.uniform(-noise, noise), 0.0, 1.0);
    img.image.at(2, y, x) = std::clamp(c.b + rng.uniform(-noise, noise), 0.0, 1.0);
    img.labels.at(y, x) = cls;
  }
};

Rgb jitter(Rgb c, Rng& rng, double amount) {
  return {c.r + rng.uniform(-amount, amount), c.g + rng.uniform(-amount, amount), c.b + rng.uniform(-amount, amount)};
}

Rgb scale(Rgb c, double f) { return {c.r * f, c.g * f, c.b * f}; }

std::size_t frac(std::size_t n, double f) {
  return static_cast<std::size_t>(std::lround(f * static_cast<double>(n)));
}

LabeledImage facade_image(Rng& rng, std::size_t w, std::size_t h) {
  using namespace facade;
  LabeledImage img{Tensor::chw(3, h, w), LabelMap{h, w, std::vector<std::uint8_t>(w * h, 0)}, kNumClasses};
  Canvas cv{img, rng};
  constexpr double kNoise = 0.03;

  const auto sky_h = static_cast<std::size_t>(rng.range(static_cast<long>(frac(h, 0.12)), static_cast<long>(frac(h, 0.25))));
  const std::size_t road_h = std::max<std::size_t>(2, static_cast<std::size_t>(rng.range(static_cast<long>(frac(h, 0.10)), static_cast<long>(frac(h, 0.15)))));
  const std::size_t pave_h = std::max<std::size_t>(2, static_cast<std::size_t>(rng.range(static_cast<long>(frac(h, 0.06)), static_cast<long>(frac(h, 0.10)))));
  const std::size_t bld_top = sky_h, bld_bot = h - road_h - pave_h;  // building rows [bld_top, bld_bot)
  const std::size_t bh = bld_bot - bld_top;

  const Rgb sky = jitter({0.55, 0.75, 0.95}, rng, 0.05);
  const Rgb wall = jitter(rng.below(2) ? Rgb{0.75, 0.62, 0.45} : Rgb{0.62, 0.30, 0.22}, rng, 0.06);
  const Rgb glass = jitter({0.15, 0.20, 0.32}, rng, 0.04);
  const Rgb door = jitter({0.38, 0.22, 0.10}, rng, 0.04);
  const Rgb green = jitter({0.20, 0.50, 0.15}, rng, 0.05);
  const Rgb pave = jitter({0.66, 0.66, 0.64}, rng, 0.04);
  const Rgb asphalt = jitter({0.28, 0.28, 0.30}, rng, 0.03);

  for (std::size_t y = 0; y < bld_top; ++y) {
    const double t = static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(1, bld_top));
    for (std::size_t x = 0; x < w; ++x) cv.put(y, x, scale(sky, 1.0 - 0.15 * t), Sky, 0.01);
  }
  for (std::size_t y = bld_top; y < bld_bot; ++y)
    for (std::size_t x = 0; x < w; ++x)
      cv.put(y, x, (y - bld_top) % 3 == 2 ? scale(wall, 0.85) : wall, Building, kNoise);
  for (std::size_t y = bld_bot; y < bld_bot + pave_h; ++y)
    for (std::size_t x = 0; x < w; ++x) cv.put(y, x, (x % 4 == 0) ? scale(pave, 0.9) : pave, Pavement, kNoise);
  for (std::size_t y = bld_bot + pave_h; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) cv.put(y, x, asphalt, Road, 0.06);

  // Window grid over the building.
  const std::size_t win_w = std::max<std::size_t>(2, w / 14), win_h = std::max<std::size_t>(2, h / 14);
  const std::size_t step_x = 2 * win_w + 1, step_y = 2 * win_h + 1;
  const std::size_t off_x = 1 + rng.below(win_w + 1);
  for (std::size_t y0 = bld_top + 1; y0 + win_h < bld_bot; y0 += step_y)
    for (std::size_t x0 = off_x; x0 + win_w < w; x0 += step_x)
      for (std::size_t y = y0; y < y0 + win_h; ++y)
        for (std::size_t x = x0; x < x0 + win_w; ++x) cv.put(y, x, glass, Window, kNoise);

  // Door in the left half, sitting on the pavement.
  const std::size_t door_w = std::max<std::size_t>(2, w / 12), door_h = std::max<std::size_t>(3, bh / 3);
  const auto door_x = static_cast<std::size_t>(rng.range(1, static_cast<long>(w / 2 - door_w - 1)));
  for (std::size_t y = bld_bot - door_h; y < bld_bot; ++y)
    for (std::size_t x = door_x; x < door_x + door_w; ++x) cv.put(y, x, door, Door, kNoise);

  // Vegetation blobs in front of the right half of the building.
  const std::size_t blobs = 1 + rng.below(3);
  for (std::size_t b = 0; b < blobs; ++b) {
    const double ry = rng.uniform(std::max(2.0, bh / 6.0), std::max(2.5, bh / 4.0));
    const double rx = rng.uniform(2.0, std::max(2.5, w / 8.0));
    const double cx = rng.uniform(w / 2.0 + rx, static_cast<double>(w) - 1.0);
    const double cy = static_cast<double>(bld_bot) - ry * 0.5;
    for (std::size_t y = bld_top; y < bld_bot; ++y)
      for (std::size_t x = w / 2; x < w; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        if (dx * dx + dy * dy <= 1.0) cv.put(y, x, scale(green, rng.uniform(0.7, 1.3)), Vegetation, 0.05);
      }
  }

  // Sometimes a car on the road.
  if (rng.below(2) == 0) {
    const std::size_t car_w = std::max<std::size_t>(3, w / 6);
    const Rgb paint = jitter(rng.below(2) ? Rgb{0.75, 0.12, 0.12} : Rgb{0.12, 0.20, 0.70}, rng, 0.05);
    const auto car_x = static_cast<std::size_t>(rng.range(0, static_cast<long>(w - car_w)));
    for (std::size_t y = h - road_h; y + 1 < h; ++y)
      for (std::size_t x = car_x; x < car_x + car_w; ++x) cv.put(y, x, paint, Car, kNoise);
  }

  // Sometimes an unlabeled clutter patch.
  if (rng.below(2) == 0) {
    const std::size_t pw = std::max<std::size_t>(2, w / 10), ph = std::max<std::size_t>(2, h / 10);
    const auto px = static_cast<std::size_t>(rng.range(0, static_cast<long>(w - pw)));
    const auto py = static_cast<std::size_t>(rng.range(static_cast<long>(bld_top), static_cast<long>(bld_bot - ph)));
    for (std::size_t y = py; y < py + ph; ++y)
      for (std::size_t x = px; x < px + pw; ++x) cv.put(y, x, {rng.uniform(), rng.uniform(), rng.uniform()}, Background, 0.0);
  }
  return img;
}

}  // namespace

std::vector<LabeledImage> gen_facade_like(std::uint64_t seed, std::size_t width, std::size_t height,
                                          std::size_t num_images) {
  if (num_images < 1) throw ParameterError("gen_facade_like: num_images must be >= 1");
  if (width < 24 || height < 24)
    throw ParameterError("gen_facade_like: width and height must be >= 24, got " + std::to_string(width) + "x" +
                         std::to_string(height));
  std::vector<LabeledImage> out;
  out.reserve(num_images);
  for (std::size_t i = 0; i < num_images; ++i) {
    Rng rng(derive_seed(seed, 0xfacade00 + i));
    out.push_back(facade_image(rng, width, height));
  }
  return out;
}

// ---- patches ----------------------------------------------------------------

Patch extract_patch(const LabeledImage& img, std::size_t patch, std::size_t cy, std::size_t cx) {
  const std::size_t r = patch / 2;
  if (patch % 2 == 0) throw ParameterError("patch size must be odd, got " + std::to_string(patch));
  if (cy < r || cx < r || cy + r >= img.height() || cx + r >= img.width())
    throw ParameterError("patch of size " + std::to_string(patch) + " at (" + std::to_string(cy) + "," +
                         std::to_string(cx) + ") leaves the image");
  const std::size_t c = img.image.dim(0);
  Patch p{Tensor::chw(c, patch, patch), img.labels.at(cy, cx), cy, cx};
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x) p.input.at(ch, y, x) = img.image.at(ch, cy - r + y, cx - r + x);
  return p;
}

Patch sample_patch(const LabeledImage& img, std::size_t patch, Rng& rng) {
  if (patch % 2 == 0) throw ParameterError("patch size must be odd, got " + std::to_string(patch));
  if (patch > std::min(img.height(), img.width()))
    throw ParameterError("patch size " + std::to_string(patch) + " exceeds image " + std::to_string(img.height()) +
                         "x" + std::to_string(img.width()));
  const std::size_t r = patch / 2;
  const std::size_t cy = r + rng.below(img.height() - 2 * r);
  const std::size_t cx = r + rng.below(img.width() - 2 * r);
  return extract_patch(img, patch, cy, cx);
}

// ---- files ------------------------------------------------------------------

RawImage image_to_raw(const Tensor& image) {
  require_chw(image, "image_to_raw");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (c != 1 && c != 3) throw ParameterError("image_to_raw: need 1 or 3 channels, got " + std::to_string(c));
  RawImage raw{w, h, c, std::vector<std::uint8_t>(w * h * c)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        raw.pixels[(y * w + x) * c + ch] =
            static_cast<std::uint8_t>(std::lround(std::clamp(image.at(ch, y, x), 0.0, 1.0) * 255.0));
  return raw;
}

Tensor raw_to_image(const RawImage& raw) {
  Tensor t = Tensor::chw(raw.channels, raw.height, raw.width);
  for (std::size_t y = 0; y < raw.height; ++y)
    for (std::size_t x = 0; x < raw.width; ++x)
      for (std::size_t ch = 0; ch < raw.channels; ++ch)
        t.at(ch, y, x) = raw.pixels[(y * raw.width + x) * raw.channels + ch] / 255.0;
  return t;
}

RawImage labels_to_pgm(const LabelMap& labels) { return {labels.width, labels.height, 1, labels.values}; }

RawImage labels_to_ppm(const LabelMap& labels, const ClassPalette& palette) {
  RawImage raw{labels.width, labels.height, 3, std::vector<std::uint8_t>(labels.values.size() * 3)};
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const auto cls = labels.values[i];
    if (cls >= palette.size()) throw DataError("label " + std::to_string(cls) + " has no palette colour");
    std::copy(palette.classes[cls].rgb.begin(), palette.classes[cls].rgb.end(), raw.pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }
  return raw;
}

LabelMap labels_from_raw(const RawImage& raw, const ClassPalette& palette, const std::string& file,
                         LoadReport& report) {
  LabelMap labels{raw.height, raw.width, std::vector<std::uint8_t>(raw.width * raw.height)};
  if (raw.channels == 1) {
    for (std::size_t i = 0; i < labels.values.size(); ++i) {
      if (raw.pixels[i] >= palette.size())
        throw DataError(file + ": class index " + std::to_string(raw.pixels[i]) + " at pixel " + std::to_string(i) +
                        " exceeds palette size " + std::to_string(palette.size()));
      labels.values[i] = raw.pixels[i];
    }
    return labels;
  }
  std::map<std::array<std::uint8_t, 3>, std::size_t> unknown;
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const std::array<std::uint8_t, 3> rgb{raw.pixels[3 * i], raw.pixels[3 * i + 1], raw.pixels[3 * i + 2]};
    if (auto cls = palette.find(rgb)) {
      labels.values[i] = static_cast<std::uint8_t>(*cls);
    } else {
      if (!palette.background)
        throw DataError(file + ": label colour (" + std::to_string(rgb[0]) + "," + std::to_string(rgb[1]) + "," +
                        std::to_string(rgb[2]) + ") is not in the palette and no background class is set");
      labels.values[i] = static_cast<std::uint8_t>(*palette.background);
      ++unknown[rgb];
    }
  }
  for (const auto& [rgb, n] : unknown) report.unknown_colors.push_back({file, rgb, n});
  return labels;
}

void save_labeled(const LabeledImage& img, const std::string& dir, const std::string& name,
                  const ClassPalette& palette, LabelEncoding encoding) {
  fs::create_directories(dir);
  const auto base = (fs::path(dir) / name).string();
  write_pnm(base + (img.image.dim(0) == 1 ? ".pgm" : ".ppm"), image_to_raw(img.image));
  if (encoding == LabelEncoding::Indexed)
    write_pnm(base + "_labels.pgm", labels_to_pgm(img.labels));
  else
    write_pnm(base + "_labels.ppm", labels_to_ppm(img.labels, palette));
}

LoadedSet load_labeled_dir(const std::string& dir, const ClassPalette& palette) {
  palette.validate();
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto p = entry.path();
    const auto ext = p.extension().string();
    if (ext != ".ppm" && ext != ".pgm") continue;
    const auto stem = p.stem().string();
    if (stem.size() >= 7 && stem.compare(stem.size() - 7, 7, "_labels") == 0) continue;
    images.push_back(p);
  }
  std::sort(images.begin(), images.end());

  LoadedSet set;
  for (const auto& p : images) {
    const auto stem = p.stem().string();
    const auto indexed = p.parent_path() / (stem + "_labels.pgm");
    const auto color = p.parent_path() / (stem + "_labels.ppm");
    fs::path label_path;
    if (fs::exists(indexed))
      label_path = indexed;
    else if (fs::exists(color))
      label_path = color;
    else
      throw IoError("missing label file for '" + p.string() + "' (expected '" + indexed.string() + "' or '" +
                    color.string() + "')");

    const auto raw = read_pnm(p.string());
    const auto raw_labels = read_pnm(label_path.string());
    if (raw.width != raw_labels.width || raw.height != raw_labels.height)
      throw DataError(label_path.string() + ": size " + std::to_string(raw_labels.width) + "x" +
                      std::to_string(raw_labels.height) + " does not match image " + std::to_string(raw.width) +
                      "x" + std::to_string(raw.height));
    LabeledImage img{raw_to_image(raw), labels_from_raw(raw_labels, palette, label_path.string(), set.report),
                     palette.size()};
    set.images.push_back(std::move(img));
    set.names.push_back(stem);
  }
  return set;
}

}  // namespace qpseg
