#pragma once

#include <Eigen/Dense>
#include <complex>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace vns {

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
// Physical samples on the N x N grid; entry (i1, i2) sits at x = (i1/N, i2/N).
using Grid2 = Eigen::ArrayXXd;
// Half spectrum, shape (N/2+1) x N; entry (j1, j2) is the mode m = (j1, signed(j2)).
using Spec2 = Eigen::ArrayXXcd;

class FourierGrid {
 public:
  explicit FourierGrid(int n, double dealias = 2.0 / 3.0);
  ~FourierGrid();
  FourierGrid(const FourierGrid&) = delete;
  FourierGrid& operator=(const FourierGrid&) = delete;

  int n() const { return n_; }
  int nh() const { return n_ / 2 + 1; }
  double dealias() const { return dealias_; }
  double spacing() const { return 1.0 / n_; }

  int mode(int j) const { return j <= n_ / 2 ? j : j - n_; }
  double k1(int j1) const;
  double k2(int j2) const;
  double ksq(int j1, int j2) const;
  // Multiplicity of a half-spectrum entry in the full lattice sum.
  double multiplicity(int j1) const { return (j1 == 0 || 2 * j1 == n_) ? 1.0 : 2.0; }
  bool nyquist(int j1, int j2) const { return 2 * j1 == n_ || 2 * j2 == n_; }
  bool kept(int j1, int j2) const;

  Spec2 forward(const Grid2& values) const;
  Grid2 inverse(const Spec2& coeffs) const;

 private:
  int n_;
  double dealias_;
  void* plan_fwd_ = nullptr;
  void* plan_inv_ = nullptr;
  double* rbuf_ = nullptr;
  void* cbuf_ = nullptr;
  mutable std::mutex mtx_;
};

using GridPtr = std::shared_ptr<const FourierGrid>;
GridPtr make_grid(int n, double dealias = 2.0 / 3.0);

struct SpectralField {
  GridPtr grid;
  std::vector<Spec2> comp;
  double time = 0.0;

  int ncomp() const { return static_cast<int>(comp.size()); }
  int n() const { return grid->n(); }

  static SpectralField zeros(GridPtr g, int ncomp, double t = 0.0);
  static SpectralField from_physical(GridPtr g, const std::vector<Grid2>& values, double t = 0.0);
  std::vector<Grid2> physical() const;

  SpectralField& operator+=(const SpectralField& o);
  SpectralField& operator-=(const SpectralField& o);
  SpectralField& operator*=(double a);
};

SpectralField operator+(SpectralField a, const SpectralField& b);
SpectralField operator-(SpectralField a, const SpectralField& b);
SpectralField operator*(double s, SpectralField a);

// Sobolev norms with wavenumbers 2*pi*m. zero_mean uses |k|^(2s) over k != 0.
double sobolev_norm(const SpectralField& f, double s, bool zero_mean = false);
double l2_norm(const SpectralField& f);
// L2 inner product on the torus of unit measure.
double inner(const SpectralField& a, const SpectralField& b);

SpectralField leray_project(const SpectralField& f);
// max_k |k . u_k| / max_k |k||u_k|, zero for the zero field.
double divergence_residual(const SpectralField& f);
bool is_hermitian_consistent(const SpectralField& f, double tol = 1e-12);

// Derivatives: grad of a field with c components returns 2c components,
// entry 2*i + j holding d_j f_i.
SpectralField grad(const SpectralField& f);
SpectralField partial(const SpectralField& f, int axis);
SpectralField curl_2d(const SpectralField& f);
SpectralField divergence(const SpectralField& f);

// Zero all modes removed by the dealiasing rule (and Nyquist modes).
SpectralField dealias_filter(const SpectralField& f);
// (u . grad) v with both inputs filtered and the product filtered.
SpectralField advection(const SpectralField& u, const SpectralField& v);
// Pointwise product of a scalar and a vector field, dealiased.
SpectralField scalar_times(const Grid2& s, const SpectralField& v);

Eigen::VectorXd evaluate_at(const SpectralField& f, const Vec2& x);
Eigen::VectorXd mean_value(const SpectralField& f);

// Fast point evaluation by periodic bicubic (4x4 Lagrange) interpolation of grid values.
class PhysicalSampler {
 public:
  PhysicalSampler() = default;
  explicit PhysicalSampler(const SpectralField& f);
  PhysicalSampler(std::vector<Grid2> values);
  int ncomp() const { return static_cast<int>(values_.size()); }
  int n() const { return n_; }
  double sample(int c, const Vec2& x) const;
  Vec2 sample2(const Vec2& x) const;
  const Grid2& values(int c) const { return values_[c]; }
  double sup_norm() const;

 private:
  int n_ = 0;
  std::vector<Grid2> values_;
};

// Binary snapshot: magic "VNSF", int32 version, int32 N, int32 ncomp, f64 time,
// f64 norm order s, f64 norm value, then coefficients per component in (j2, j1)
// row-major order as (re, im) pairs, little-endian.
void write_snapshot(const std::string& path, const SpectralField& f, double s_meta = 0.5);
SpectralField read_snapshot(const std::string& path);
void write_physical_csv(const std::string& path, const SpectralField& f);

}  // namespace vns
