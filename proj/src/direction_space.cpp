#include "latentdirs/direction_space.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "latentdirs/error.hpp"
#include "latentdirs/io.hpp"

namespace latentdirs {

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::ShapeMismatch, "matrix exponential of a non-square matrix");
  if (!m.allFinite()) throw Error(ErrorKind::NonFinite, "matrix exponential of a non-finite matrix");
  const Eigen::Index n = m.rows();
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd x = m / std::ldexp(1.0, squarings);

  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  // ||x|| < 0.5, so 0.5^j / j! drops below 1e-17 well before 30 terms.
  for (int j = 1; j <= 30; ++j) {
    term = term * x / static_cast<double>(j);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

Eigen::MatrixXd skew_exponential(const Eigen::MatrixXd& s, double tol) {
  if (s.rows() != s.cols()) throw Error(ErrorKind::Validation, "skew matrix must be square");
  const double asym = (s + s.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= tol)) {
    throw Error(ErrorKind::Validation, "matrix is not skew-symmetric (max |S + S^T| = " + std::to_string(asym) + ")");
  }
  return matrix_exponential(s);
}

Eigen::MatrixXd exp_gradient(const Eigen::MatrixXd& s, const Eigen::MatrixXd& g) {
  const Eigen::Index n = s.rows();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = s.transpose();
  block.bottomRightCorner(n, n) = s.transpose();
  block.topRightCorner(n, n) = g;
  return matrix_exponential(block).topRightCorner(n, n);
}

std::string_view to_string(DirectionMode mode) {
  switch (mode) {
    case DirectionMode::UnitNorm: return "unit_norm";
    case DirectionMode::Orthonormal: return "orthonormal";
    case DirectionMode::Linear: return "linear";
  }
  return "unknown";
}

DirectionMode parse_direction_mode(std::string_view text) {
  if (text == "unit_norm" || text == "unitnorm" || text == "unit") return DirectionMode::UnitNorm;
  if (text == "orthonormal" || text == "ortho") return DirectionMode::Orthonormal;
  if (text == "linear") return DirectionMode::Linear;
  throw Error(ErrorKind::Validation, "unknown direction mode '" + std::string(text) + "'");
}

namespace {

std::size_t raw_size(DirectionMode mode, int d, int k) {
  if (mode == DirectionMode::Orthonormal) return static_cast<std::size_t>(d) * (d - 1) / 2;
  return static_cast<std::size_t>(d) * k;
}

void check_dims(DirectionMode mode, int d, int k) {
  if (d <= 0 || k <= 0) throw Error(ErrorKind::Validation, "latent_dim and num_directions must be positive");
  if (mode == DirectionMode::Orthonormal && k > d) {
    throw Error(ErrorKind::Validation, "orthonormal mode requires K <= d");
  }
}

}  // namespace

DirectionMatrix::DirectionMatrix(DirectionMode mode, int d, int k, std::vector<float> raw)
    : mode_(mode), d_(d), k_(k), raw_(std::move(raw)) {
  check_dims(mode, d, k);
  if (raw_.size() != raw_size(mode, d, k)) {
    throw Error(ErrorKind::ShapeMismatch, "raw parameter count " + std::to_string(raw_.size()) +
                                              " does not match mode " + std::string(to_string(mode)));
  }
}

DirectionMatrix DirectionMatrix::identity(DirectionMode mode, int d, int k) {
  check_dims(mode, d, k);
  std::vector<float> raw(raw_size(mode, d, k), 0.0f);
  if (mode != DirectionMode::Orthonormal) {
    for (int j = 0; j < k; ++j) raw[static_cast<std::size_t>(j) * d + (j % d)] = 1.0f;
  }
  return DirectionMatrix(mode, d, k, std::move(raw));
}

DirectionMatrix DirectionMatrix::random(DirectionMode mode, int d, int k, Rng& rng, double scale) {
  check_dims(mode, d, k);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<float> raw(raw_size(mode, d, k));
  for (auto& v : raw) v = static_cast<float>(normal(rng));
  return DirectionMatrix(mode, d, k, std::move(raw));
}

DirectionMatrix DirectionMatrix::from_columns(const Eigen::MatrixXd& columns) {
  const int d = static_cast<int>(columns.rows());
  const int k = static_cast<int>(columns.cols());
  std::vector<float> raw(static_cast<std::size_t>(d) * k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < d; ++i) raw[static_cast<std::size_t>(j) * d + i] = static_cast<float>(columns(i, j));
  }
  return DirectionMatrix(DirectionMode::UnitNorm, d, k, std::move(raw));
}

DirectionMatrix DirectionMatrix::from_skew_params(int d, int k, std::vector<float> params) {
  return DirectionMatrix(DirectionMode::Orthonormal, d, k, std::move(params));
}

Eigen::MatrixXd DirectionMatrix::skew_matrix() const {
  if (mode_ != DirectionMode::Orthonormal) throw Error(ErrorKind::Unsupported, "skew matrix only exists in orthonormal mode");
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d_, d_);
  std::size_t idx = 0;
  for (int i = 1; i < d_; ++i) {
    for (int j = 0; j < i; ++j, ++idx) {
      s(i, j) = raw_[idx];
      s(j, i) = -static_cast<double>(raw_[idx]);
    }
  }
  return s;
}

Eigen::MatrixXd DirectionMatrix::effective() const {
  for (float v : raw_) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "direction matrix has non-finite raw parameters");
  }
  if (mode_ == DirectionMode::Orthonormal) {
    return skew_exponential(skew_matrix()).leftCols(k_);
  }
  Eigen::MatrixXd a(d_, k_);
  for (int j = 0; j < k_; ++j) {
    for (int i = 0; i < d_; ++i) a(i, j) = raw_[static_cast<std::size_t>(j) * d_ + i];
  }
  if (mode_ == DirectionMode::UnitNorm) {
    for (int j = 0; j < k_; ++j) {
      const double norm = a.col(j).norm();
      if (norm < 1e-8) {
        throw Error(ErrorKind::DegenerateColumn, "raw column " + std::to_string(j) + " has near-zero norm");
      }
      a.col(j) /= norm;
    }
  }
  return a;
}

std::vector<float> DirectionMatrix::backprop(const Eigen::MatrixXd& grad_effective) const {
  if (grad_effective.rows() != d_ || grad_effective.cols() != k_) {
    throw Error(ErrorKind::ShapeMismatch, "gradient shape does not match direction matrix");
  }
  std::vector<float> grad(raw_.size(), 0.0f);
  switch (mode_) {
    case DirectionMode::Linear:
      for (int j = 0; j < k_; ++j) {
        for (int i = 0; i < d_; ++i) grad[static_cast<std::size_t>(j) * d_ + i] = static_cast<float>(grad_effective(i, j));
      }
      break;
    case DirectionMode::UnitNorm:
      for (int j = 0; j < k_; ++j) {
        Eigen::VectorXd r(d_);
        for (int i = 0; i < d_; ++i) r(i) = raw_[static_cast<std::size_t>(j) * d_ + i];
        const double norm = r.norm();
        if (norm < 1e-8) throw Error(ErrorKind::DegenerateColumn, "raw column " + std::to_string(j) + " has near-zero norm");
        const Eigen::VectorXd a = r / norm;
        const Eigen::VectorXd g = grad_effective.col(j);
        const Eigen::VectorXd gr = (g - a * a.dot(g)) / norm;
        for (int i = 0; i < d_; ++i) grad[static_cast<std::size_t>(j) * d_ + i] = static_cast<float>(gr(i));
      }
      break;
    case DirectionMode::Orthonormal: {
      Eigen::MatrixXd gq = Eigen::MatrixXd::Zero(d_, d_);
      gq.leftCols(k_) = grad_effective;
      const Eigen::MatrixXd gs = exp_gradient(skew_matrix(), gq);
      std::size_t idx = 0;
      for (int i = 1; i < d_; ++i) {
        for (int j = 0; j < i; ++j, ++idx) grad[idx] = static_cast<float>(gs(i, j) - gs(j, i));
      }
      break;
    }
  }
  return grad;
}

LatentCode DirectionMatrix::apply_shift(std::span<const float> z, int k, double eps) const {
  return apply_shift(effective(), z, k, eps);
}

LatentCode DirectionMatrix::apply_shift(const Eigen::MatrixXd& effective, std::span<const float> z,
                                        int k, double eps) {
  if (k < 0 || k >= effective.cols()) {
    throw Error(ErrorKind::Index, "direction index " + std::to_string(k) + " out of range [0, " +
                                      std::to_string(effective.cols()) + ")");
  }
  if (static_cast<Eigen::Index>(z.size()) != effective.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "latent code length does not match direction matrix");
  }
  LatentCode out(z.begin(), z.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(out[i] + eps * effective(static_cast<Eigen::Index>(i), k));
  }
  return out;
}

void DirectionMatrix::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write("LDIR", 4);
  io::write_u32_le(out, 1);
  io::write_u32_le(out, static_cast<std::uint32_t>(mode_));
  io::write_u32_le(out, static_cast<std::uint32_t>(d_));
  io::write_u32_le(out, static_cast<std::uint32_t>(k_));
  io::write_u32_le(out, static_cast<std::uint32_t>(raw_.size()));
  io::write_f32_le(out, raw_);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
  io::write_json(path.string() + ".json", {{"mode", std::string(to_string(mode_))},
                                           {"d", d_},
                                           {"K", k_},
                                           {"seed", seed_}});
}

DirectionMatrix DirectionMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "LDIR") {
    throw Error(ErrorKind::Io, path.string() + " is not a direction matrix file");
  }
  if (io::read_u32_le(in) != 1) throw Error(ErrorKind::Io, "unsupported direction file version");
  const auto mode_id = io::read_u32_le(in);
  if (mode_id > 2) throw Error(ErrorKind::Io, "unknown direction mode id");
  const int d = static_cast<int>(io::read_u32_le(in));
  const int k = static_cast<int>(io::read_u32_le(in));
  const auto count = io::read_u32_le(in);
  DirectionMatrix a(static_cast<DirectionMode>(mode_id), d, k, io::read_f32_le(in, count));
  const auto meta_path = path.string() + ".json";
  if (std::filesystem::exists(meta_path)) a.seed_ = io::read_json(meta_path).value("seed", std::uint64_t{0});
  return a;
}

Eigen::MatrixXd random_orthogonal(int d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (int j = 0; j < d; ++j) {
    for (int i = 0; i < d; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace latentdirs
