#include "avsc/io.hpp"

#include <json.hpp>
#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace avsc::io {

namespace fs = std::filesystem;
static_assert(std::endian::native == std::endian::little, "array I/O assumes little-endian");

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_sidecar(const fs::path& array_path, const FeatureMeta& meta, const std::string& kind,
                   const FeatureMatrix& m) {
  nlohmann::json j = {{"kind", kind},
                      {"speaker_id", meta.speaker_id},
                      {"utterance_id", meta.utterance_id},
                      {"fps", meta.fps},
                      {"hop_ms", meta.hop_ms},
                      {"window_ms", meta.window_ms},
                      {"frames", m.rows()},
                      {"dims", m.cols()}};
  std::ofstream out(sidecar_path(array_path));
  if (!out) fail(sidecar_path(array_path), "cannot write sidecar");
  out << j.dump(2) << '\n';
}

FeatureMeta read_sidecar(const fs::path& array_path) {
  const fs::path p = sidecar_path(array_path);
  std::ifstream in(p);
  if (!in) fail(p, "missing sidecar");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(p, std::string("malformed sidecar: ") + e.what());
  }
  FeatureMeta meta;
  meta.speaker_id = j.value("speaker_id", "");
  meta.utterance_id = j.value("utterance_id", "");
  meta.fps = j.value("fps", kFacialFps);
  meta.hop_ms = j.value("hop_ms", kTrainHopMs);
  meta.window_ms = j.value("window_ms", kTrainWindowMs);
  return meta;
}

}  // namespace

fs::path sidecar_path(const fs::path& array_path) {
  fs::path p = array_path;
  p.replace_extension(".json");
  return p;
}

// ---------------------------------------------------------------- arrays

void save_array(const fs::path& path, const FeatureMatrix& m) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                       std::to_string(m.rows()) + ", " + std::to_string(m.cols()) + "), }";
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  out.write("\x93NUMPY", 6);
  out.put(1);
  out.put(0);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!out) fail(path, "short write");
}

FeatureMatrix load_array(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) fail(path, "not an array file (bad magic)");
  const int major = in.get();
  in.get();
  std::size_t header_len = 0;
  if (major == 1) header_len = get<std::uint16_t>(in);
  else if (major == 2 || major == 3) header_len = get<std::uint32_t>(in);
  else fail(path, "unsupported array format version " + std::to_string(major));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) fail(path, "truncated header");

  if (header.find("'descr': '<f4'") == std::string::npos) fail(path, "dtype must be little-endian float32");
  if (header.find("'fortran_order': False") == std::string::npos) fail(path, "fortran order unsupported");
  static const std::regex shape_re(R"('shape':\s*\(\s*(\d+)\s*,\s*(\d+)\s*\))");
  std::smatch match;
  if (!std::regex_search(header, match, shape_re)) fail(path, "array must be two-dimensional");
  const long rows = std::stol(match[1].str());
  const long cols = std::stol(match[2].str());

  FeatureMatrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) fail(path, "truncated data: header declares " + std::to_string(rows) + "x" + std::to_string(cols));
  return m;
}

void save_facial_features(const fs::path& path, const FacialFeatureSequence& seq, const FeatureMeta& meta) {
  save_array(path, seq.fused);
  FeatureMeta m = meta;
  m.fps = seq.fps;
  write_sidecar(path, m, "facial", seq.fused);
}

FacialFeatureSequence load_facial_features(const fs::path& path, FeatureMeta* meta) {
  FacialFeatureSequence seq;
  seq.fused = load_array(path);
  if (seq.fused.cols() != kFacialDim) {
    fail(path, "facial features must have width " + std::to_string(kFacialDim) + ", file declares " +
                   std::to_string(seq.fused.cols()));
  }
  const FeatureMeta m = read_sidecar(path);
  seq.fps = m.fps;
  if (meta != nullptr) *meta = m;
  return seq;
}

void save_mel(const fs::path& path, const MelSpectrogram& mel, const FeatureMeta& meta) {
  save_array(path, mel.frames);
  FeatureMeta m = meta;
  m.hop_ms = mel.hop_ms;
  m.window_ms = mel.window_ms;
  write_sidecar(path, m, "mel", mel.frames);
}

MelSpectrogram load_mel(const fs::path& path, FeatureMeta* meta) {
  MelSpectrogram mel;
  mel.frames = load_array(path);
  if (mel.frames.cols() != kMelBands) {
    fail(path, "mel features must have width 80, file declares " + std::to_string(mel.frames.cols()));
  }
  const FeatureMeta m = read_sidecar(path);
  mel.hop_ms = m.hop_ms;
  mel.window_ms = m.window_ms;
  if (meta != nullptr) *meta = m;
  return mel;
}

// ---------------------------------------------------------------- WAV

void save_wav(const fs::path& path, const AudioClip& clip) {
  if (clip.sample_rate <= 0) fail(path, "sample rate must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  put<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put<std::uint32_t>(out, 16);
  put<std::uint16_t>(out, 1);  // PCM
  put<std::uint16_t>(out, 1);  // mono
  put<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put<std::uint16_t>(out, 2);
  put<std::uint16_t>(out, 16);
  out.write("data", 4);
  put<std::uint32_t>(out, data_bytes);
  for (float s : clip.samples) {
    const double v = std::clamp(std::round(static_cast<double>(s) * 32768.0), -32768.0, 32767.0);
    put<std::int16_t>(out, static_cast<std::int16_t>(v));
  }
  if (!out) fail(path, "short write");
}

AudioClip load_audio(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0) fail(path, "not a RIFF file");
  get<std::uint32_t>(in);
  in.read(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) fail(path, "not a WAVE file");

  bool have_fmt = false;
  AudioClip clip;
  while (in.read(tag, 4)) {
    const auto size = get<std::uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = get<std::uint16_t>(in);
      const auto channels = get<std::uint16_t>(in);
      clip.sample_rate = static_cast<int>(get<std::uint32_t>(in));
      get<std::uint32_t>(in);
      get<std::uint16_t>(in);
      const auto bits = get<std::uint16_t>(in);
      if (format != 1) fail(path, "only PCM WAV is supported");
      if (channels != 1) fail(path, "expected mono audio, got " + std::to_string(channels) + " channels");
      if (bits != 16) fail(path, "expected 16-bit samples, got " + std::to_string(bits));
      in.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_fmt) fail(path, "data chunk before fmt chunk");
      clip.samples.resize(size / 2);
      for (auto& s : clip.samples) s = static_cast<float>(get<std::int16_t>(in) / 32768.0);
      if (!in) fail(path, "truncated data chunk");
      return clip;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  fail(path, "no data chunk");
}

// ---------------------------------------------------------------- PNG

void save_png(const fs::path& path, const RgbImage& image) {
  if (image.pixels.rows() != static_cast<Eigen::Index>(image.height) * image.width || image.pixels.cols() != 3) {
    fail(path, "image pixel matrix does not match its dimensions");
  }
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "PNG encoding failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.pixels(y * image.width + x, c), 0.0, 1.0);
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage load_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) fail(path, std::string("PNG: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    fail(path, std::string("PNG: ") + img.message);
  }
  RgbImage out;
  out.height = static_cast<int>(img.height);
  out.width = static_cast<int>(img.width);
  out.pixels.resize(static_cast<Eigen::Index>(out.height) * out.width, 3);
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) out.pixels.data()[i] = buf[i] / 255.0;
  return out;
}

// ---------------------------------------------------------------- hashing

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for hashing");
  std::unique_ptr<EVP_MD_CTX, void (*)(EVP_MD_CTX*)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace avsc::io
