#include "latentdirs/generator.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

#include <unistd.h>

#include "latentdirs/error.hpp"

namespace latentdirs {

std::vector<LatentCode> sample_latent(std::size_t n, int latent_dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LatentCode> out(n, LatentCode(static_cast<std::size_t>(latent_dim)));
  for (auto& z : out) {
    for (auto& v : z) v = static_cast<float>(normal(rng));
  }
  return out;
}

void Generator::check_inputs(std::span<const float> z, std::optional<int> c) const {
  if (static_cast<int>(z.size()) != latent_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "latent code has length " + std::to_string(z.size()) +
                                              ", generator expects " + std::to_string(latent_dim()));
  }
  if (class_conditional()) {
    if (!c) throw Error(ErrorKind::Validation, "class-conditional generator requires a class label");
    if (*c < 0 || *c >= num_classes()) throw Error(ErrorKind::Index, "class label " + std::to_string(*c) + " out of range");
  } else if (c) {
    throw Error(ErrorKind::Validation, "unconditional generator does not take a class label");
  }
}

std::vector<float> Generator::vjp(std::span<const float> z, std::optional<int> c, const Image& grad) const {
  check_inputs(z, c);
  constexpr double h = 1e-3;
  std::vector<float> out(z.size());
  LatentCode zp(z.begin(), z.end());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const float orig = zp[i];
    zp[i] = static_cast<float>(orig + h);
    const Image plus = generate(zp, c);
    zp[i] = static_cast<float>(orig - h);
    const Image minus = generate(zp, c);
    zp[i] = orig;
    double acc = 0.0;
    for (std::size_t p = 0; p < grad.pixels.size(); ++p) {
      acc += static_cast<double>(grad.pixels[p]) * (plus.pixels[p] - minus.pixels[p]);
    }
    out[i] = static_cast<float>(acc / (2.0 * h));
  }
  return out;
}

// ---------------------------------------------------------------- roles

std::string_view to_string(FactorRole role) {
  switch (role) {
    case FactorRole::PosX: return "pos_x";
    case FactorRole::PosY: return "pos_y";
    case FactorRole::Size: return "size";
    case FactorRole::Intensity: return "intensity";
    case FactorRole::Rotation: return "rotation";
    case FactorRole::BackgroundLevel: return "background_level";
  }
  return "unknown";
}

FactorRole parse_factor_role(std::string_view text) {
  for (auto r : {FactorRole::PosX, FactorRole::PosY, FactorRole::Size, FactorRole::Intensity,
                 FactorRole::Rotation, FactorRole::BackgroundLevel}) {
    if (to_string(r) == text) return r;
  }
  throw Error(ErrorKind::Validation, "unknown factor role '" + std::string(text) + "'");
}

void OracleSpec::validate() const {
  if (latent_dim <= 0) throw Error(ErrorKind::Validation, "oracle latent_dim must be positive");
  if (roles.empty() || num_factors() > latent_dim) {
    throw Error(ErrorKind::Validation, "oracle needs 1 <= m <= d factors");
  }
  for (std::size_t i = 0; i < roles.size(); ++i) {
    for (std::size_t j = i + 1; j < roles.size(); ++j) {
      if (roles[i] == roles[j]) throw Error(ErrorKind::Validation, "duplicate oracle role " + std::string(to_string(roles[i])));
    }
  }
  if (image.channels != 1 && image.channels != 3) throw Error(ErrorKind::Validation, "oracle renders 1 or 3 channels");
  if (image.height < 16 || image.width < 16) throw Error(ErrorKind::Validation, "oracle images must be at least 16x16");
  if (num_classes < 0) throw Error(ErrorKind::Validation, "num_classes must be >= 0");
}

io::Json OracleSpec::to_json() const {
  io::Json r = io::Json::array();
  for (auto role : roles) r.push_back(std::string(to_string(role)));
  return {{"seed", seed},
          {"d", latent_dim},
          {"m", num_factors()},
          {"roles", r},
          {"image", {{"channels", image.channels}, {"height", image.height}, {"width", image.width}}},
          {"num_classes", num_classes},
          {"identity_mixing", identity_mixing}};
}

OracleSpec OracleSpec::from_json(const io::Json& j) {
  OracleSpec s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    s.latent_dim = j.value("d", 16);
    if (j.contains("roles")) {
      s.roles.clear();
      for (const auto& r : j.at("roles")) s.roles.push_back(parse_factor_role(r.get<std::string>()));
    }
    if (j.contains("m")) {
      const int m = j.at("m").get<int>();
      if (m < 0 || m > static_cast<int>(s.roles.size())) throw Error(ErrorKind::Validation, "oracle m exceeds role list");
      s.roles.resize(static_cast<std::size_t>(m));
    }
    if (j.contains("image")) {
      const auto& im = j.at("image");
      s.image = ImageShape{im.value("channels", 1), im.value("height", 32), im.value("width", 32)};
    }
    s.num_classes = j.value("num_classes", 0);
    s.identity_mixing = j.value("identity_mixing", false);

  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed oracle spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- oracle

OracleGenerator::OracleGenerator(OracleSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.identity_mixing) {
    q_ = Eigen::MatrixXd::Identity(spec_.latent_dim, spec_.latent_dim);
  } else {
    Rng rng(spec_.seed);
    q_ = random_orthogonal(spec_.latent_dim, rng);
  }
}

std::vector<double> OracleGenerator::factor_coords(std::span<const float> z) const {
  std::vector<double> u(static_cast<std::size_t>(spec_.num_factors()), 0.0);
  for (int i = 0; i < spec_.num_factors(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < spec_.latent_dim; ++j) acc += q_(j, i) * z[static_cast<std::size_t>(j)];
    u[static_cast<std::size_t>(i)] = acc;
  }
  return u;
}

int OracleGenerator::shape_for(std::optional<int> c) const { return c ? (*c % 4) : 0; }

OracleScene OracleGenerator::scene_from_factors(std::span<const double> u, int shape) const {
  const double sx = spec_.image.width / 32.0;
  const double sy = spec_.image.height / 32.0;
  OracleScene s;
  s.shape = shape;
  s.center_x = spec_.image.width / 2.0;
  s.center_y = spec_.image.height / 2.0;
  s.scale = 1.0;
  s.foreground = 0.25;
  s.angle = 0.0;
  s.background = 0.5;
  auto respond = [](double v, double rate, double range) { return std::clamp(rate * v, -range, range); };
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double v = u[i];
    switch (spec_.roles[i]) {
      case FactorRole::PosX:
        s.center_x += respond(v, 2.0 * sx, 9.0 * sx);
        break;
      case FactorRole::PosY:
        s.center_y += respond(v, 2.0 * sy, 9.0 * sy);
        break;
      case FactorRole::Size:
        s.scale = std::sqrt(1.0 + respond(v, 0.04, 0.4));
        break;
      case FactorRole::Intensity:
        s.foreground = 0.25 + respond(v, 0.05, 0.25);
        break;
      case FactorRole::Rotation:
        s.angle = respond(v, 6.0, 60.0) * std::numbers::pi / 180.0;
        break;
      case FactorRole::BackgroundLevel:
        s.background = 0.5 + respond(v, 0.08, 0.5);
        break;
    }
  }
  return s;
}

OracleScene OracleGenerator::scene(std::span<const float> z, std::optional<int> c) const {
  check_inputs(z, c);
  const auto u = factor_coords(z);
  return scene_from_factors(u, shape_for(c));
}

namespace {

double box_sdf(double x, double y, double hx, double hy) {
  const double qx = std::abs(x) - hx;
  const double qy = std::abs(y) - hy;
  const double ox = std::max(qx, 0.0);
  const double oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

double ellipse_sdf(double x, double y, double rx, double ry) {
  const double k0 = std::hypot(x / rx, y / ry);
  const double k1 = std::hypot(x / (rx * rx), y / (ry * ry));
  if (k1 < 1e-12) return -std::min(rx, ry);
  return k0 * (k0 - 1.0) / k1;
}

double diamond_sdf(double x, double y, double a, double b) {
  return (std::abs(x) / a + std::abs(y) / b - 1.0) * a * b / std::hypot(a, b);
}

}  // namespace

std::vector<double> OracleGenerator::coverage_of(const OracleScene& s) const {
  const int h = spec_.image.height;
  const int w = spec_.image.width;
  // Shape geometry is defined at 32x32 and scaled to the canvas.
  const double unit = std::min(w, h) / 32.0 * s.scale;
  const double ca = std::cos(s.angle);
  const double sa = std::sin(s.angle);
  std::vector<double> cov(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - s.center_x;
      const double dy = y + 0.5 - s.center_y;
      const double lx = ca * dx + sa * dy;
      const double ly = -sa * dx + ca * dy;
      double sdf = 0.0;
      switch (s.shape) {
        case 0: sdf = box_sdf(lx, ly, 6.0 * unit, 4.0 * unit); break;
        case 1: sdf = ellipse_sdf(lx, ly, 6.5 * unit, 4.5 * unit); break;
        case 2: sdf = diamond_sdf(lx, ly, 8.0 * unit, 6.0 * unit); break;
        default:
          sdf = std::min(box_sdf(lx, ly, 7.0 * unit, 2.5 * unit), box_sdf(lx, ly, 2.5 * unit, 6.0 * unit));
          break;
      }
      cov[static_cast<std::size_t>(y) * w + x] = std::clamp(0.5 - sdf, 0.0, 1.0);
    }
  }
  return cov;
}

std::vector<double> OracleGenerator::render(const OracleScene& s) const {
  auto plane = coverage_of(s);
  for (auto& v : plane) v = s.background + v * (s.foreground - s.background);
  return plane;
}

Image OracleGenerator::generate(std::span<const float> z, std::optional<int> c) const {
  const OracleScene s = scene(z, c);
  const auto plane = render(s);
  Image img(spec_.image);
  for (int ch = 0; ch < spec_.image.channels; ++ch) {
    std::transform(plane.begin(), plane.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(ch * plane.size()),
                   [](double v) { return static_cast<float>(v); });
  }
  return img;
}

std::vector<float> OracleGenerator::vjp(std::span<const float> z, std::optional<int> c, const Image& grad) const {
  check_inputs(z, c);
  if (!(grad.shape == spec_.image)) throw Error(ErrorKind::ShapeMismatch, "gradient image shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(spec_.image.height) * spec_.image.width;
  std::vector<double> gsum(plane, 0.0);
  for (int ch = 0; ch < spec_.image.channels; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) gsum[i] += grad.pixels[ch * plane + i];
  }
  // Central differences in factor space; the image depends on z only via u.
  constexpr double h = 1e-3;
  auto u = factor_coords(z);
  const int shape = shape_for(c);
  std::vector<double> gu(u.size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double orig = u[i];
    u[i] = orig + h;
    const auto plus = render(scene_from_factors(u, shape));
    u[i] = orig - h;
    const auto minus = render(scene_from_factors(u, shape));
    u[i] = orig;
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += gsum[p] * (plus[p] - minus[p]);
    gu[i] = acc / (2.0 * h);
  }
  std::vector<float> gz(z.size(), 0.0f);
  for (int j = 0; j < spec_.latent_dim; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += q_(j, static_cast<Eigen::Index>(i)) * gu[i];
    gz[static_cast<std::size_t>(j)] = static_cast<float>(acc);
  }
  return gz;
}

std::uint64_t OracleGenerator::parameter_checksum() const {
  std::uint64_t hsh = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < q_.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(q_.data()[i]);
    for (int b = 0; b < 8; ++b) {
      hsh ^= (bits >> (8 * b)) & 0xffu;
      hsh *= 1099511628211ull;
    }
  }
  return hsh;
}

std::string OracleGenerator::description() const {
  return "oracle(d=" + std::to_string(spec_.latent_dim) + ", m=" + std::to_string(spec_.num_factors()) +
         ", seed=" + std::to_string(spec_.seed) + ")";
}

Eigen::MatrixXd OracleGenerator::ground_truth_directions() const { return q_.leftCols(spec_.num_factors()); }

Eigen::VectorXd OracleGenerator::role_direction(FactorRole role) const {
  for (std::size_t i = 0; i < spec_.roles.size(); ++i) {
    if (spec_.roles[i] == role) return q_.col(static_cast<Eigen::Index>(i));
  }
  throw Error(ErrorKind::Unsupported, "oracle has no " + std::string(to_string(role)) + " factor");
}

Eigen::VectorXd OracleGenerator::background_direction() const {
  return role_direction(FactorRole::BackgroundLevel);
}

Eigen::VectorXd OracleGenerator::null_direction(int which) const {
  const int col = spec_.num_factors() + which;
  if (which < 0 || col >= spec_.latent_dim) throw Error(ErrorKind::Unsupported, "oracle has no null direction " + std::to_string(which));
  return q_.col(col);
}

std::vector<double> OracleGenerator::coverage(std::span<const float> z, std::optional<int> c) const {
  return coverage_of(scene(z, c));
}

std::vector<std::uint8_t> OracleGenerator::foreground_mask(std::span<const float> z, std::optional<int> c) const {
  const auto cov = coverage(z, c);
  std::vector<std::uint8_t> mask(cov.size());
  std::transform(cov.begin(), cov.end(), mask.begin(), [](double v) { return v > 0.0 ? 1 : 0; });
  return mask;
}

// ---------------------------------------------------------------- adapters

FunctionGenerator::FunctionGenerator(int latent_dim, ImageShape shape, int num_classes, Fn fn, std::string name)
    : d_(latent_dim), shape_(shape), classes_(num_classes), fn_(std::move(fn)), name_(std::move(name)) {}

Image FunctionGenerator::generate(std::span<const float> z, std::optional<int> c) const {
  check_inputs(z, c);
  Image img = fn_(z, c);
  if (!(img.shape == shape_) || img.pixels.size() != shape_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "adapter returned an image of the wrong shape");
  }
  for (float& v : img.pixels) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "adapter returned non-finite pixels");
    v = std::clamp(v, 0.0f, 1.0f);
  }
  return img;
}

ExternalGenerator::ExternalGenerator(const std::filesystem::path& descriptor) {
  const auto j = io::read_json(descriptor);
  try {
    command_ = j.at("command").get<std::string>();
    d_ = j.at("latent_dim").get<int>();
    shape_ = ImageShape{j.value("channels", 1), j.at("height").get<int>(), j.at("width").get<int>()};
    classes_ = j.value("num_classes", 0);
    if (j.contains("weights")) {
      weights_ = j.at("weights").get<std::string>();
      if (weights_.is_relative()) weights_ = descriptor.parent_path() / weights_;
    }
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed adapter descriptor: ") + e.what());
  }
  if (d_ <= 0 || shape_.size() == 0) throw Error(ErrorKind::Validation, "adapter descriptor has empty shapes");
}

std::vector<Image> ExternalGenerator::generate_batch(std::span<const LatentCode> zs, std::span<const int> classes) const {
  static std::atomic<unsigned> counter{0};
  const auto tmp = std::filesystem::temp_directory_path();
  const std::string tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const auto in_path = tmp / ("latentdirs_in_" + tag + ".bin");
  const auto out_path = tmp / ("latentdirs_out_" + tag + ".bin");
  {
    std::ofstream out(in_path, std::ios::binary);
    io::write_u32_le(out, static_cast<std::uint32_t>(zs.size()));
    io::write_u32_le(out, static_cast<std::uint32_t>(d_));
    for (const auto& z : zs) io::write_f32_le(out, z);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      io::write_u32_le(out, static_cast<std::uint32_t>(i < classes.size() ? classes[i] : -1));
    }
  }
  const std::string cmd = command_ + " '" + in_path.string() + "' '" + out_path.string() + "'";
  const int rc = std::system(cmd.c_str());
  std::filesystem::remove(in_path);
  if (rc != 0) throw Error(ErrorKind::Io, "generator adapter exited with status " + std::to_string(rc));
  std::ifstream in(out_path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "generator adapter produced no output");
  std::vector<Image> images;
  for (std::size_t i = 0; i < zs.size(); ++i) {
    Image img(shape_);
    img.pixels = io::read_f32_le(in, shape_.size());
    for (float& v : img.pixels) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "adapter returned non-finite pixels");
      v = std::clamp(v, 0.0f, 1.0f);
    }
    images.push_back(std::move(img));
  }
  in.close();
  std::filesystem::remove(out_path);
  return images;
}

Image ExternalGenerator::generate(std::span<const float> z, std::optional<int> c) const {
  check_inputs(z, c);
  std::vector<LatentCode> zs{LatentCode(z.begin(), z.end())};
  std::vector<int> cs{c.value_or(-1)};
  return std::move(generate_batch(zs, cs).front());
}

std::vector<float> ExternalGenerator::vjp(std::span<const float> z, std::optional<int> c, const Image& grad) const {
  check_inputs(z, c);
  constexpr double h = 1e-3;
  std::vector<LatentCode> zs;
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (double sign : {1.0, -1.0}) {
      LatentCode zp(z.begin(), z.end());
      zp[i] = static_cast<float>(zp[i] + sign * h);
      zs.push_back(std::move(zp));
    }
  }
  const std::vector<int> cs(zs.size(), c.value_or(-1));
  const auto images = generate_batch(zs, cs);
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < grad.pixels.size(); ++p) {
      acc += static_cast<double>(grad.pixels[p]) * (images[2 * i].pixels[p] - images[2 * i + 1].pixels[p]);
    }
    out[i] = static_cast<float>(acc / (2.0 * h));
  }
  return out;
}

std::uint64_t ExternalGenerator::parameter_checksum() const {
  if (weights_.empty()) return 0;
  const std::string bytes = io::read_text(weights_);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace latentdirs
