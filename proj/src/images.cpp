#include "megan/images.hpp"

#include "megan/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace megan::img {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Image bilinear_resize(const Image& in, int out_h, int out_w) {
  if (in.height < 1 || in.width < 1) throw std::invalid_argument("bilinear_resize: empty image");
  Image out(out_h, out_w);
  const double sy = static_cast<double>(in.height) / out_h;
  const double sx = static_cast<double>(in.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * in.at(y0, x0, c) + wx * in.at(y0, x1, c);
        const double bot = (1.0 - wx) * in.at(y1, x0, c) + wx * in.at(y1, x1, c);
        out.at(y, x, c) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Eigen::MatrixXf patchify_full(const Image& img) {
  const Image resized = (img.height == 46 && img.width == 46) ? img : bilinear_resize(img, 46, 46);
  Eigen::MatrixXf out(12, 23 * 23);
  for (int py = 0; py < 23; ++py) {
    for (int px = 0; px < 23; ++px) {
      const int col = py * 23 + px;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int c = 0; c < 3; ++c)
            out(3 * (2 * dy + dx) + c, col) = static_cast<float>(resized.at(2 * py + dy, 2 * px + dx, c));
    }
  }
  return out;
}

Eigen::MatrixXf patchify_image(const Image& img) { return patchify_full(img).leftCols(512); }

Image unpatchify(const Eigen::MatrixXf& patches, int out_h, int out_w) {
  Image out(out_h, out_w);
  for (int col = 0; col < patches.cols(); ++col) {
    const int py = col / 23;
    const int px = col % 23;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        for (int c = 0; c < 3; ++c)
          out.at(2 * py + dy, 2 * px + dx, c) = patches(3 * (2 * dy + dx) + c, col);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus IO
// ---------------------------------------------------------------------------

Image ImageCorpus::image(int i) const {
  Image out(height, width);
  const size_t stride = static_cast<size_t>(height) * width * 3;
  const std::uint8_t* src = pixels.data() + stride * static_cast<size_t>(i);
  for (size_t j = 0; j < stride; ++j) out.data[j] = src[j] / 255.0;
  return out;
}

void ImageCorpus::save(const std::string& dir) const {
  fs::create_directories(dir);
  json j;
  j["version"] = 1;
  j["count"] = count();
  j["height"] = height;
  j["width"] = width;
  j["classes"] = classes;
  j["labels"] = labels;
  std::ofstream mf(fs::path(dir) / "corpus.json");
  if (!mf) throw std::runtime_error("cannot write corpus.json under " + dir);
  mf << j.dump(2) << "\n";
  std::ofstream pf(fs::path(dir) / "images.u8", std::ios::binary);
  pf.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!pf) throw std::runtime_error("short write to images.u8");
}

ImageCorpus ImageCorpus::load(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "corpus.json");
  if (!mf) throw CorruptionError("missing corpus.json under " + dir);
  json j;
  try {
    mf >> j;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("unparseable corpus.json: ") + e.what());
  }
  ImageCorpus c;
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.classes = j.at("classes").get<int>();
  c.labels = j.at("labels").get<std::vector<int>>();
  if (j.at("count").get<int>() != c.count()) throw CorruptionError("corpus count mismatch");
  const size_t expected = static_cast<size_t>(c.count()) * c.height * c.width * 3;
  std::ifstream pf(fs::path(dir) / "images.u8", std::ios::binary | std::ios::ate);
  if (!pf) throw CorruptionError("missing images.u8 under " + dir);
  if (static_cast<size_t>(pf.tellg()) != expected) throw CorruptionError("images.u8 size mismatch");
  pf.seekg(0);
  c.pixels.resize(expected);
  pf.read(reinterpret_cast<char*>(c.pixels.data()), static_cast<std::streamsize>(expected));
  if (!pf) throw CorruptionError("read failure in images.u8");
  return c;
}

// ---------------------------------------------------------------------------
// Procedural corpus
// ---------------------------------------------------------------------------

ImageCorpus synth_image_corpus(int count, int classes, std::uint64_t seed, int size) {
  if (count < 1) throw std::invalid_argument("synth_image_corpus: count must be >= 1");
  if (classes < 2 || classes > 8) throw std::invalid_argument("synth_image_corpus: classes must be in [2, 8]");

  ImageCorpus corpus;
  corpus.height = size;
  corpus.width = size;
  corpus.classes = classes;
  corpus.pixels.resize(static_cast<size_t>(count) * size * size * 3);
  corpus.labels.resize(count);

  Rng master(seed);
  for (int i = 0; i < count; ++i) {
    Rng rng = master.child(static_cast<std::uint64_t>(i));
    const int cls = i % classes;  // balanced labels
    corpus.labels[i] = cls;

    const double freq = rng.uniform(3.0, 8.0);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    const double cx = rng.uniform(0.3, 0.7) * size;
    const double cy = rng.uniform(0.3, 0.7) * size;
    const double sigma = rng.uniform(0.15, 0.35) * size;
    const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
    // A handful of blob centers for class 5.
    double bx[6], by[6];
    for (int s = 0; s < 6; ++s) {
      bx[s] = rng.uniform(0.0, 1.0) * size;
      by[s] = rng.uniform(0.0, 1.0) * size;
    }
    double col_a[3], col_b[3];
    for (int c = 0; c < 3; ++c) {
      col_a[c] = rng.uniform(0.1, 1.0);
      col_b[c] = rng.uniform(0.0, 0.6);
    }

    std::uint8_t* px = corpus.pixels.data() + static_cast<size_t>(i) * size * size * 3;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double v = 0.0;
        switch (cls) {
          case 0: v = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * y / size + phase); break;
          case 1: v = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * x / size + phase); break;
          case 2: v = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * (x + y) / (2.0 * size) + phase); break;
          case 3:
            v = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * x / size + phase) *
                          std::sin(2.0 * kPi * freq * y / size + phase);
            break;
          case 4: {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            v = std::exp(-r2 / (2.0 * sigma * sigma));
            break;
          }
          case 5: {
            for (int s = 0; s < 6; ++s) {
              const double r2 = (x - bx[s]) * (x - bx[s]) + (y - by[s]) * (y - by[s]);
              v += std::exp(-r2 / (2.0 * 9.0));
            }
            v = std::min(1.0, v);
            break;
          }
          case 6: {
            const double t = (gx * (x - size / 2.0) + gy * (y - size / 2.0)) / size;
            v = std::clamp(0.5 + t, 0.0, 1.0);
            break;
          }
          default: v = rng.uniform(); break;
        }
        for (int c = 0; c < 3; ++c) {
          const double val = std::clamp(col_b[c] + (col_a[c] - col_b[c]) * v, 0.0, 1.0);
          px[(static_cast<size_t>(y) * size + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
      }
    }
  }
  return corpus;
}

}  // namespace megan::img
