#pragma once

// The trainable direction matrix A (d x K), its parametrizations and the
// latent shift z + eps * a_k.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latentdirs/nn.hpp"

namespace latentdirs {

using LatentCode = std::vector<float>;

// exp(M) by scaling and squaring: M is scaled by 2^-s until its 1-norm is
// below 0.5, the Taylor series is summed to double precision, and the
// result is squared s times.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m);

// exp(S) for skew-symmetric S. Throws Error{Validation} when S^T != -S
// within tol. The result lies in SO(d).
Eigen::MatrixXd skew_exponential(const Eigen::MatrixXd& s, double tol = 1e-9);

// Adjoint of the Frechet derivative of exp at S applied to G, i.e. the
// gradient of <G, exp(S)> with respect to S. Computed from the upper-right
// block of exp([[S^T, G], [0, S^T]]).
Eigen::MatrixXd exp_gradient(const Eigen::MatrixXd& s, const Eigen::MatrixXd& g);

enum class DirectionMode {
  UnitNorm,     // each raw column divided by its length
  Orthonormal,  // first K columns of exp(S), S skew-symmetric
  Linear,       // unconstrained operator; experimental, not used by default
};

std::string_view to_string(DirectionMode mode);
DirectionMode parse_direction_mode(std::string_view text);

class DirectionMatrix {
 public:
  // Columns e_1..e_K of I_d (UnitNorm/Linear) or S = 0 (Orthonormal).
  static DirectionMatrix identity(DirectionMode mode, int latent_dim, int num_directions);
  // Gaussian raw columns (UnitNorm/Linear) or Gaussian skew entries scaled by `scale`.
  static DirectionMatrix random(DirectionMode mode, int latent_dim, int num_directions, Rng& rng,
                                double scale = 1.0);
  // UnitNorm matrix whose raw columns are the given d x K columns.
  static DirectionMatrix from_columns(const Eigen::MatrixXd& columns);
  // Orthonormal matrix from the d(d-1)/2 under-diagonal skew entries,
  // ordered row-major: (1,0), (2,0), (2,1), (3,0), ...
  static DirectionMatrix from_skew_params(int latent_dim, int num_directions,
                                          std::vector<float> params);

  [[nodiscard]] DirectionMode mode() const { return mode_; }
  [[nodiscard]] int latent_dim() const { return d_; }
  [[nodiscard]] int num_directions() const { return k_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  [[nodiscard]] std::span<float> raw_params() { return raw_; }
  [[nodiscard]] std::span<const float> raw_params() const { return raw_; }

  // Skew-symmetric S assembled from raw params (Orthonormal mode only).
  [[nodiscard]] Eigen::MatrixXd skew_matrix() const;

  // The d x K matrix actually used for shifting.
  [[nodiscard]] Eigen::MatrixXd effective() const;

  // Chain rule from dL/d(effective) (d x K) to dL/d(raw params).
  [[nodiscard]] std::vector<float> backprop(const Eigen::MatrixXd& grad_effective) const;

  // z + eps * a_k for 0-based direction index k.
  [[nodiscard]] LatentCode apply_shift(std::span<const float> z, int k, double eps) const;
  // Same, reusing an already computed effective matrix.
  static LatentCode apply_shift(const Eigen::MatrixXd& effective, std::span<const float> z, int k,
                                double eps);

  // Binary container plus `<path>.json` metadata.
  void save(const std::filesystem::path& path) const;
  static DirectionMatrix load(const std::filesystem::path& path);

 private:
  DirectionMatrix(DirectionMode mode, int d, int k, std::vector<float> raw);

  DirectionMode mode_;
  int d_;
  int k_;
  std::uint64_t seed_ = 0;
  std::vector<float> raw_;
};

// Random d x d rotation (QR of a Gaussian matrix, signs fixed so R has a
// positive diagonal).
Eigen::MatrixXd random_orthogonal(int d, Rng& rng);

}  // namespace latentdirs
