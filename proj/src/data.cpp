#include "qtseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "qtseg/errors.hpp"
#include "qtseg/ops.hpp"

namespace qtseg {

namespace fs = std::filesystem;

Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   int64_t target, int64_t num_classes) {
  Tensor image = io::read_image(image_path);
  Tensor mask = io::read_mask(mask_path, num_classes);
  if (image.dim(1) != mask.dim(0) || image.dim(2) != mask.dim(1)) {
    throw IoError("image/mask size mismatch: " + image_path + " is " +
                  std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                  " but " + mask_path + " is " + std::to_string(mask.dim(0)) + "x" +
                  std::to_string(mask.dim(1)));
  }
  Sample s;
  s.image = ops::resize_to(image, target, target, ops::ResizeMode::kBilinear);
  Tensor m = ops::reshape(mask, {1, mask.dim(0), mask.dim(1)});
  m = ops::resize_to(m, target, target, ops::ResizeMode::kNearest);
  s.mask = ops::reshape(m, {target, target});
  s.name = fs::path(image_path).stem().string();
  return s;
}

FoldSpec kfold_split(const std::vector<std::vector<std::string>>& names_per_class,
                     int folds, int fold) {
  if (folds < 2) throw ConfigError("kfold_split needs at least 2 folds");
  if (fold < 0 || fold >= folds) {
    throw ConfigError("fold index " + std::to_string(fold) + " outside [0, " +
                      std::to_string(folds) + ")");
  }
  FoldSpec spec;
  spec.fold = fold;
  spec.folds = folds;
  for (const std::vector<std::string>& names : names_per_class) {
    const auto len = static_cast<int64_t>(names.size());
    if (len < folds) {
      throw ConfigError("a class with " + std::to_string(len) +
                        " samples cannot be split into " + std::to_string(folds) +
                        " folds");
    }
    const int64_t lo = fold * len / folds;
    const int64_t hi = (fold + 1) * len / folds;
    for (int64_t i = 0; i < len; ++i) {
      auto& dst = (i >= lo && i < hi) ? spec.test : spec.train;
      dst.push_back(names[static_cast<size_t>(i)]);
    }
  }
  return spec;
}

namespace {

struct Ellipse {
  double cy, cx, a, b, cos_t, sin_t;

  bool contains(int64_t y, int64_t x) const {
    const double dy = static_cast<double>(y) + 0.5 - cy;
    const double dx = static_cast<double>(x) + 0.5 - cx;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

std::vector<Sample> synth_dataset(int count, int64_t size, int64_t num_classes,
                                  uint64_t seed) {
  if (size % 32 != 0) throw ConfigError("synthetic size must be divisible by 32");
  if (num_classes < 1) throw ConfigError("synthetic dataset needs a class");
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));

  const double lo_axis = static_cast<double>(size) / 7.0;
  const double hi_axis = static_cast<double>(size) / 4.0;
  // Keep the whole ellipse in frame regardless of rotation.
  const float lo_center = static_cast<float>(hi_axis);
  const float hi_center = static_cast<float>(size) - static_cast<float>(hi_axis);

  for (int i = 0; i < count; ++i) {
    Sample s;
    s.name = "synth_" + std::to_string(i);
    s.mask = Tensor::zeros({size, size});
    s.image = Tensor::zeros({3, size, size});

    std::vector<std::pair<int64_t, Ellipse>> shapes;  // (class, ellipse)
    for (int64_t c = 1; c <= num_classes; ++c) {
      const int64_t n_shapes = rng.uniform_int(1, 3);
      for (int64_t j = 0; j < n_shapes; ++j) {
        Ellipse e;
        e.cy = rng.uniform(lo_center, hi_center);
        e.cx = rng.uniform(lo_center, hi_center);
        e.a = rng.uniform(static_cast<float>(lo_axis), static_cast<float>(hi_axis));
        e.b = rng.uniform(static_cast<float>(lo_axis), static_cast<float>(hi_axis));
        const float theta = rng.uniform(0.0f, 6.2831853f);
        e.cos_t = std::cos(theta);
        e.sin_t = std::sin(theta);
        shapes.emplace_back(c, e);
      }
    }

    float* mask = s.mask.data();
    float* img = s.image.data();
    const int64_t plane = size * size;
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const int64_t at = y * size + x;
        // Later classes overwrite earlier ones where ellipses overlap.
        for (const auto& [cls, e] : shapes) {
          if (e.contains(y, x)) mask[at] = static_cast<float>(cls);
        }
        const auto cls = static_cast<int64_t>(mask[at]);
        // Bright foreground bands on a dark noisy background.
        const float base =
            cls == 0 ? 0.20f
                     : 0.55f + 0.40f * static_cast<float>(cls) /
                                   static_cast<float>(num_classes);
        const float v =
            std::min(1.0f, std::max(0.0f, base + rng.uniform(-0.08f, 0.08f)));
        img[0 * plane + at] = v;
        img[1 * plane + at] = v;
        img[2 * plane + at] = v;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

// Index transforms for an HxW grid; rotation is counterclockwise.
void transform_plane(const float* src, float* dst, int64_t h, int64_t w,
                     bool hflip, bool vflip, int rot) {
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      // Walk the output coordinate back to its source: rotations were
      // applied last, so they unwind first, then the flips.
      int64_t ty = y;
      int64_t tx = x;
      int64_t th = h;  // current grid height while unwinding rotations
      int64_t tw = w;
      for (int r = 0; r < rot; ++r) {
        // Inverse of one CCW quarter turn: (y, x) came from (x, H'-1-y)
        // on a grid whose height/width are swapped.
        const int64_t ny = tx;
        const int64_t nx = th - 1 - ty;
        ty = ny;
        tx = nx;
        std::swap(th, tw);
      }
      if (hflip) tx = tw - 1 - tx;
      if (vflip) ty = th - 1 - ty;
      dst[y * w + x] = src[ty * tw + tx];
    }
  }
}

}  // namespace

Sample apply_augment(const Sample& s, bool hflip, bool vflip, int rot90) {
  if (s.mask.rank() != 2 || s.image.rank() != 3) {
    throw ShapeError("augment expects image [3,H,W] and mask [H,W]");
  }
  const int rot = ((rot90 % 4) + 4) % 4;
  const int64_t h = s.mask.dim(0);
  const int64_t w = s.mask.dim(1);
  const bool swaps = (rot % 2) == 1;
  const int64_t oh = swaps ? w : h;
  const int64_t ow = swaps ? h : w;

  Sample out;
  out.name = s.name;
  out.mask = Tensor::zeros({oh, ow});
  out.image = Tensor::zeros({3, oh, ow});
  // Flips first, rotation second: out = rot90^k(flip(in)).
  transform_plane(s.mask.data(), out.mask.data(), oh, ow, hflip, vflip, rot);
  for (int64_t c = 0; c < 3; ++c) {
    transform_plane(s.image.data() + c * h * w, out.image.data() + c * oh * ow, oh,
                    ow, hflip, vflip, rot);
  }
  return out;
}

Sample augment(const Sample& s, Rng& rng) {
  const bool hflip = rng.bernoulli(0.5f);
  const bool vflip = rng.bernoulli(0.5f);
  const int rot = static_cast<int>(rng.uniform_int(0, 3));
  return apply_augment(s, hflip, vflip, rot);
}

std::string class_key(const std::string& name) {
  std::string key;
  for (char c : name) {
    if (std::isalpha(static_cast<unsigned char>(c)) == 0) break;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return key;
}

DatasetIndex scan_dataset(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw IoError("dataset directory needs images/ and masks/ under " + dir);
  }

  DatasetIndex index;
  for (const fs::directory_entry& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg" && ext != ".bmp") continue;
    const std::string name = entry.path().stem().string();
    const fs::path mask = masks / (name + ".png");
    if (!fs::is_regular_file(mask)) {
      throw IoError("missing mask for sample '" + name + "': " + mask.string());
    }
    index.names.push_back(name);
    index.image_paths[name] = entry.path().string();
    index.mask_paths[name] = mask.string();
  }
  if (index.names.empty()) {
    throw IoError("no samples found under " + images.string());
  }
  std::sort(index.names.begin(), index.names.end());

  std::set<std::string> keys;
  for (const std::string& name : index.names) keys.insert(class_key(name));
  index.class_keys.assign(keys.begin(), keys.end());
  index.names_per_class.resize(index.class_keys.size());
  for (const std::string& name : index.names) {
    const auto it = std::find(index.class_keys.begin(), index.class_keys.end(),
                              class_key(name));
    index.names_per_class[static_cast<size_t>(it - index.class_keys.begin())]
        .push_back(name);
  }
  return index;
}

Tensor stack_images(const std::vector<Sample>& samples,
                    const std::vector<int64_t>& indices) {
  if (indices.empty()) throw ConfigError("stack_images over an empty batch");
  const Tensor& first = samples[static_cast<size_t>(indices[0])].image;
  const int64_t h = first.dim(1);
  const int64_t w = first.dim(2);
  Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), 3, h, w});
  for (size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = samples[static_cast<size_t>(indices[b])].image;
    if (!same_shape(img.shape(), first.shape())) {
      throw ShapeError("stack_images over mixed sizes: " + shape_str(img.shape()) +
                       " vs " + shape_str(first.shape()));
    }
    std::copy(img.values().begin(), img.values().end(),
              out.data() + static_cast<int64_t>(b) * img.numel());
  }
  return out;
}

Tensor stack_masks(const std::vector<Sample>& samples,
                   const std::vector<int64_t>& indices) {
  if (indices.empty()) throw ConfigError("stack_masks over an empty batch");
  const Tensor& first = samples[static_cast<size_t>(indices[0])].mask;
  const int64_t h = first.dim(0);
  const int64_t w = first.dim(1);
  Tensor out = Tensor::zeros({static_cast<int64_t>(indices.size()), h, w});
  for (size_t b = 0; b < indices.size(); ++b) {
    const Tensor& m = samples[static_cast<size_t>(indices[b])].mask;
    if (!same_shape(m.shape(), first.shape())) {
      throw ShapeError("stack_masks over mixed sizes: " + shape_str(m.shape()) +
                       " vs " + shape_str(first.shape()));
    }
    std::copy(m.values().begin(), m.values().end(),
              out.data() + static_cast<int64_t>(b) * m.numel());
  }
  return out;
}

}  // namespace qtseg
