#pragma once

// Frozen generators: G maps a latent code (and optional class) to an image
// in [0, 1]. Direction discovery also needs vector-Jacobian products of G
// with respect to z; the default implementation uses central differences.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentdirs/direction_space.hpp"
#include "latentdirs/image.hpp"
#include "latentdirs/io.hpp"
#include "latentdirs/nn.hpp"

namespace latentdirs {

// n i.i.d. N(0, I_d) codes drawn in order from rng.
std::vector<LatentCode> sample_latent(std::size_t n, int latent_dim, Rng& rng);

class Generator {
 public:
  virtual ~Generator() = default;

  [[nodiscard]] virtual int latent_dim() const = 0;
  [[nodiscard]] virtual ImageShape image_shape() const = 0;
  [[nodiscard]] virtual int num_classes() const { return 0; }
  [[nodiscard]] bool class_conditional() const { return num_classes() > 0; }

  // Deterministic image for (z, c). Throws on wrong latent length or a
  // missing/extra class label.
  [[nodiscard]] virtual Image generate(std::span<const float> z, std::optional<int> c = {}) const = 0;

  // dL/dz given dL/dG(z). Default: central differences along each latent axis.
  [[nodiscard]] virtual std::vector<float> vjp(std::span<const float> z, std::optional<int> c,
                                               const Image& grad) const;

  // Checksum of whatever parameters define the generator.
  [[nodiscard]] virtual std::uint64_t parameter_checksum() const = 0;

  [[nodiscard]] virtual std::string description() const = 0;

 protected:
  void check_inputs(std::span<const float> z, std::optional<int> c) const;
};

enum class FactorRole { PosX, PosY, Size, Intensity, Rotation, BackgroundLevel };

std::string_view to_string(FactorRole role);
FactorRole parse_factor_role(std::string_view text);

struct OracleSpec {
  std::uint64_t seed = 0;
  int latent_dim = 16;
  std::vector<FactorRole> roles = {FactorRole::PosX,      FactorRole::PosY,     FactorRole::Size,
                                   FactorRole::Intensity, FactorRole::Rotation, FactorRole::BackgroundLevel};
  ImageShape image{1, 32, 32};
  // 0 = unconditional (one rectangle). Otherwise class c renders shape c % 4.
  int num_classes = 0;
  // Use Q = I instead of a seeded random rotation.
  bool identity_mixing = false;

  [[nodiscard]] int num_factors() const { return static_cast<int>(roles.size()); }
  void validate() const;

  [[nodiscard]] io::Json to_json() const;
  static OracleSpec from_json(const io::Json& j);
};

// Rendered scene parameters for one latent code.
struct OracleScene {
  double center_x = 0;
  double center_y = 0;
  double scale = 1;  // linear size multiplier (area multiplier squared)
  double foreground = 0;
  double angle = 0;  // radians
  double background = 0;
  int shape = 0;
};

// Procedural generator with known factors. The image depends on z only
// through u = Q^T z; coordinate i of u drives roles[i], linearly around the
// neutral value at u = 0 and clamped to a half-range R:
//   role               rate per unit     R (at 32 px)
//   pos_x / pos_y      2 px              9 px (center stays 7 px from the border)
//   size               4% area           40%
//   intensity          foreground 0.05   0.25 around 0.25
//   rotation           6 degrees         60 degrees
//   background_level   0.08 toward white 0.5 around 0.5
// Shapes have a one-pixel linear anti-aliasing ramp on their signed distance.
class OracleGenerator final : public Generator {
 public:
  explicit OracleGenerator(OracleSpec spec);

  int latent_dim() const override { return spec_.latent_dim; }
  ImageShape image_shape() const override { return spec_.image; }
  int num_classes() const override { return spec_.num_classes; }
  Image generate(std::span<const float> z, std::optional<int> c = {}) const override;
  std::vector<float> vjp(std::span<const float> z, std::optional<int> c, const Image& grad) const override;
  std::uint64_t parameter_checksum() const override;
  std::string description() const override;

  [[nodiscard]] const OracleSpec& spec() const { return spec_; }
  [[nodiscard]] const Eigen::MatrixXd& mixing() const { return q_; }

  // Columns Q e_1 .. Q e_m.
  [[nodiscard]] Eigen::MatrixXd ground_truth_directions() const;
  // Q e_i for the background_level role; Error{Unsupported} if absent.
  [[nodiscard]] Eigen::VectorXd background_direction() const;
  // Unit vector orthogonal to every factor direction (requires m < d).
  [[nodiscard]] Eigen::VectorXd null_direction(int which = 0) const;
  [[nodiscard]] Eigen::VectorXd role_direction(FactorRole role) const;

  [[nodiscard]] OracleScene scene(std::span<const float> z, std::optional<int> c = {}) const;
  // Per-pixel shape coverage in [0, 1] (H*W, row-major).
  [[nodiscard]] std::vector<double> coverage(std::span<const float> z, std::optional<int> c = {}) const;
  // Analytic foreground support: pixels with any shape coverage.
  [[nodiscard]] std::vector<std::uint8_t> foreground_mask(std::span<const float> z,
                                                          std::optional<int> c = {}) const;

 private:
  [[nodiscard]] std::vector<double> factor_coords(std::span<const float> z) const;
  [[nodiscard]] OracleScene scene_from_factors(std::span<const double> u, int shape) const;
  [[nodiscard]] std::vector<double> coverage_of(const OracleScene& s) const;
  [[nodiscard]] std::vector<double> render(const OracleScene& s) const;
  [[nodiscard]] int shape_for(std::optional<int> c) const;

  OracleSpec spec_;
  Eigen::MatrixXd q_;
};

// In-process adapter around a user callable.
class FunctionGenerator final : public Generator {
 public:
  using Fn = std::function<Image(std::span<const float>, std::optional<int>)>;
  FunctionGenerator(int latent_dim, ImageShape shape, int num_classes, Fn fn, std::string name = "function");

  int latent_dim() const override { return d_; }
  ImageShape image_shape() const override { return shape_; }
  int num_classes() const override { return classes_; }
  Image generate(std::span<const float> z, std::optional<int> c = {}) const override;
  std::uint64_t parameter_checksum() const override { return 0; }
  std::string description() const override { return name_; }

 private:
  int d_;
  ImageShape shape_;
  int classes_;
  Fn fn_;
  std::string name_;
};

// Out-of-process adapter. The adapter descriptor is a JSON file:
//   {"command": "...", "latent_dim": d, "channels": C, "height": H, "width": W,
//    "num_classes": 0, "weights": "optional path whose bytes are checksummed"}
// For each request the command is run as `command IN OUT`; IN holds
// u32 n, u32 d, n*d float32 latents, then n int32 classes (-1 when
// unconditional); OUT must hold n*C*H*W float32 values in [0, 1].
class ExternalGenerator final : public Generator {
 public:
  explicit ExternalGenerator(const std::filesystem::path& descriptor);

  int latent_dim() const override { return d_; }
  ImageShape image_shape() const override { return shape_; }
  int num_classes() const override { return classes_; }
  Image generate(std::span<const float> z, std::optional<int> c = {}) const override;
  // Central differences, with all 2d perturbed codes sent in one request.
  std::vector<float> vjp(std::span<const float> z, std::optional<int> c, const Image& grad) const override;
  std::uint64_t parameter_checksum() const override;
  std::string description() const override { return "external:" + command_; }

  std::vector<Image> generate_batch(std::span<const LatentCode> zs, std::span<const int> classes) const;

 private:
  std::string command_;
  std::filesystem::path weights_;
  int d_;
  ImageShape shape_;
  int classes_;
};

}  // namespace latentdirs
