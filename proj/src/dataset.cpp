#include "dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "error.hpp"
#include "rng.hpp"
#include "serialize.hpp"
#include "tensor_io.hpp"

namespace fs = std::filesystem;

namespace dafe {

Tensor read_pgm(const std::string& path) {
  std::vector<char> bytes = read_file_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_token = [&]() {
    skip_space();
    std::string tok;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      tok.push_back(bytes[pos++]);
    if (tok.empty()) raise(ErrorCode::format, "truncated PGM header in " + path);
    return tok;
  };
  if (read_token() != "P5")
    raise(ErrorCode::format, path + " is not a binary PGM (P5)");
  std::size_t width = 0, height = 0, maxval = 0;
  try {
    width = std::stoul(read_token());
    height = std::stoul(read_token());
    maxval = std::stoul(read_token());
  } catch (const std::exception&) {
    raise(ErrorCode::format, "bad PGM header in " + path);
  }
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255)
    raise(ErrorCode::format, "unsupported PGM header in " + path);
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos < width * height)
    raise(ErrorCode::format, "truncated PGM payload in " + path + " at offset " +
                                 std::to_string(pos));
  Tensor img({height, width});
  for (std::size_t i = 0; i < width * height; ++i)
    img[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) /
             static_cast<double>(maxval);
  return img;
}

void write_pgm(const std::string& path, const Tensor& image01) {
  if (image01.rank() != 2) raise(ErrorCode::dimension, "write_pgm: expected [H,W]");
  const std::size_t h = image01.dim(0), w = image01.dim(1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io, "cannot open " + path + " for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double v = std::clamp(image01.at(i, j), 0.0, 1.0);
      row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(w));
  }
  if (!out) raise(ErrorCode::io, "write failed for " + path);
}

Dataset load_dataset(const std::string& root) {
  if (!fs::is_directory(root))
    raise(ErrorCode::data, "dataset root " + root + " is not a directory");
  Dataset ds;
  std::vector<std::string> identities;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) identities.push_back(entry.path().filename().string());
  std::sort(identities.begin(), identities.end());
  if (identities.empty()) raise(ErrorCode::data, "dataset root " + root + " is empty");

  // Views are the union of per-identity subdirectories, in sorted order.
  std::vector<std::string> views;
  for (const std::string& id : identities)
    for (const auto& entry : fs::directory_iterator(fs::path(root) / id))
      if (entry.is_directory()) {
        std::string v = entry.path().filename().string();
        if (std::find(views.begin(), views.end(), v) == views.end()) views.push_back(v);
      }
  std::sort(views.begin(), views.end());
  if (views.empty()) raise(ErrorCode::data, "dataset has no view directories");

  ds.identity_names = identities;
  ds.view_names = views;
  for (std::size_t id = 0; id < identities.size(); ++id) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      fs::path dir = fs::path(root) / identities[id] / views[v];
      if (!fs::is_directory(dir)) continue;
      std::vector<std::string> files;
      for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path().string());
      std::sort(files.begin(), files.end());
      for (const std::string& file : files) {
        Tensor img;
        if (file.size() >= 5 && file.substr(file.size() - 5) == ".daft") {
          img = read_daft(file);
          if (img.rank() != 2)
            raise(ErrorCode::format, "dataset tensor " + file + " must be rank 2");
        } else {
          img = read_pgm(file);
        }
        ds.items.push_back({ds.images.size(), static_cast<int>(id), static_cast<int>(v)});
        ds.images.push_back(std::move(img));
      }
    }
  }
  if (ds.images.empty()) raise(ErrorCode::data, "dataset has no images");
  return ds;
}

namespace {

struct Blob {
  double cx, cy, sigma, amplitude;
};

struct ViewTransform {
  double rotation, scale, dx, dy;   // rigid part
  double warp_amp, warp_freq;       // sinusoidal bend
  double gain, offset;              // brightness
};

double template_value(const std::vector<Blob>& blobs, double x, double y) {
  double v = 0.0;
  for (const Blob& b : blobs) {
    const double dx = x - b.cx, dy = y - b.cy;
    v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  return v;
}

}  // namespace

Dataset synthesize_dataset(const SyntheticSpec& spec) {
  if (spec.identities < 1 || spec.views < 1 || spec.images_per_view < 1)
    raise(ErrorCode::parameter, "synthetic spec: counts must be positive");
  if (spec.image_size < 8)
    raise(ErrorCode::parameter, "synthetic spec: image size too small");
  const double size = static_cast<double>(spec.image_size);

  SeededRng id_rng(spec.seed, 11);
  std::vector<std::vector<Blob>> templates(spec.identities);
  for (auto& blobs : templates) {
    const std::size_t count = 4 + id_rng.next_index(3);
    for (std::size_t b = 0; b < count; ++b) {
      Blob blob;
      blob.cx = size * (0.18 + 0.64 * id_rng.next_double());
      blob.cy = size * (0.18 + 0.64 * id_rng.next_double());
      blob.sigma = size * (0.05 + 0.10 * id_rng.next_double());
      blob.amplitude = 0.45 + 0.55 * id_rng.next_double();
      blobs.push_back(blob);
    }
  }

  SeededRng view_rng(spec.seed, 23);
  std::vector<ViewTransform> transforms(spec.views);
  for (std::size_t v = 0; v < spec.views; ++v) {
    ViewTransform& t = transforms[v];
    const double c = spec.curvature;
    t.rotation = c * 0.22 * (2.0 * view_rng.next_double() - 1.0);
    t.scale = 1.0 + c * 0.10 * (2.0 * view_rng.next_double() - 1.0);
    t.dx = c * 0.06 * size * (2.0 * view_rng.next_double() - 1.0);
    t.dy = c * 0.06 * size * (2.0 * view_rng.next_double() - 1.0);
    t.warp_amp = c * 0.04 * size * view_rng.next_double();
    t.warp_freq = 1.0 + view_rng.next_index(3);
    t.gain = 1.0 + 0.25 * (2.0 * view_rng.next_double() - 1.0);
    t.offset = 0.10 * (2.0 * view_rng.next_double() - 1.0);
  }

  Dataset ds;
  SeededRng noise_rng(spec.seed, 37);
  const double half = size / 2.0;
  for (std::size_t id = 0; id < spec.identities; ++id) {
    ds.identity_names.push_back("id_" + std::to_string(id));
    // normalize each template against its own peak over the pixel grid
    double peak = 1e-9;
    for (std::size_t i = 0; i < spec.image_size; ++i)
      for (std::size_t j = 0; j < spec.image_size; ++j)
        peak = std::max(peak, template_value(templates[id], j + 0.5, i + 0.5));
    for (std::size_t v = 0; v < spec.views; ++v) {
      if (id == 0) ds.view_names.push_back("view_" + std::to_string(v));
      const ViewTransform& t = transforms[v];
      const double cosr = std::cos(t.rotation), sinr = std::sin(t.rotation);
      for (std::size_t n = 0; n < spec.images_per_view; ++n) {
        Tensor img({spec.image_size, spec.image_size});
        for (std::size_t i = 0; i < spec.image_size; ++i) {
          for (std::size_t j = 0; j < spec.image_size; ++j) {
            // inverse-map the pixel into template coordinates
            double x = j + 0.5, y = i + 0.5;
            x += t.warp_amp *
                 std::sin(2.0 * std::numbers::pi * t.warp_freq * y / size);
            double xc = (x - half - t.dx) / t.scale;
            double yc = (y - half - t.dy) / t.scale;
            double xs = cosr * xc + sinr * yc + half;
            double ys = -sinr * xc + cosr * yc + half;
            double value = template_value(templates[id], xs, ys) / peak;
            value = t.gain * value + t.offset;
            if (spec.noise > 0.0) value += spec.noise * noise_rng.next_gaussian();
            img.at(i, j) = std::clamp(value, 0.0, 1.0);
          }
        }
        ds.items.push_back({ds.images.size(), static_cast<int>(id), static_cast<int>(v)});
        ds.images.push_back(std::move(img));
      }
    }
  }
  return ds;
}

void generate_synthetic(const SyntheticSpec& spec, const std::string& out_root) {
  Dataset ds = synthesize_dataset(spec);
  fs::create_directories(out_root);
  char name[64];
  std::vector<std::size_t> counter(spec.identities * spec.views, 0);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const EvalItem& item = ds.items[n];
    fs::path dir = fs::path(out_root) / ds.identity_names[item.identity] /
                   ds.view_names[item.view];
    fs::create_directories(dir);
    std::size_t& c = counter[item.identity * spec.views + item.view];
    std::snprintf(name, sizeof(name), "img_%03zu.pgm", c++);
    write_pgm((dir / name).string(), ds.images[n]);
  }
}

}  // namespace dafe
