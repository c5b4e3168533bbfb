#include "vns/fourier.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "vns/errors.hpp"

namespace vns {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

FourierGrid::FourierGrid(int n, double dealias) : n_(n), dealias_(dealias) {
  if (n < 4 || n % 2 != 0) throw Error(ErrorKind::Config, "grid size must be even and >= 4");
  if (!(dealias > 0.0 && dealias <= 1.0)) throw Error(ErrorKind::Config, "dealias fraction outside (0,1]");
  rbuf_ = fftw_alloc_real(static_cast<size_t>(n) * n);
  cbuf_ = fftw_alloc_complex(static_cast<size_t>(n) * nh());
  auto* c = static_cast<fftw_complex*>(cbuf_);
  plan_fwd_ = fftw_plan_dft_r2c_2d(n, n, rbuf_, c, FFTW_ESTIMATE);
  plan_inv_ = fftw_plan_dft_c2r_2d(n, n, c, rbuf_, FFTW_ESTIMATE);
}

FourierGrid::~FourierGrid() {
  fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
  fftw_free(rbuf_);
  fftw_free(cbuf_);
}

double FourierGrid::k1(int j1) const { return kTwoPi * j1; }
double FourierGrid::k2(int j2) const { return kTwoPi * mode(j2); }
double FourierGrid::ksq(int j1, int j2) const {
  double a = k1(j1), b = k2(j2);
  return a * a + b * b;
}

bool FourierGrid::kept(int j1, int j2) const {
  if (nyquist(j1, j2)) return false;
  double cut = dealias_ * n_ / 2.0;
  return std::abs(j1) < cut && std::abs(mode(j2)) < cut;
}

Spec2 FourierGrid::forward(const Grid2& values) const {
  std::lock_guard<std::mutex> lock(mtx_);
  std::memcpy(rbuf_, values.data(), sizeof(double) * n_ * n_);
  fftw_execute(static_cast<fftw_plan>(plan_fwd_));
  Spec2 out(nh(), n_);
  auto* c = static_cast<fftw_complex*>(cbuf_);
  double scale = 1.0 / (static_cast<double>(n_) * n_);
  for (int j2 = 0; j2 < n_; ++j2)
    for (int j1 = 0; j1 < nh(); ++j1) {
      const auto& z = c[j2 * nh() + j1];
      out(j1, j2) = cplx(z[0], z[1]) * scale;
    }
  return out;
}

Grid2 FourierGrid::inverse(const Spec2& coeffs) const {
  std::lock_guard<std::mutex> lock(mtx_);
  auto* c = static_cast<fftw_complex*>(cbuf_);
  for (int j2 = 0; j2 < n_; ++j2)
    for (int j1 = 0; j1 < nh(); ++j1) {
      c[j2 * nh() + j1][0] = coeffs(j1, j2).real();
      c[j2 * nh() + j1][1] = coeffs(j1, j2).imag();
    }
  fftw_execute(static_cast<fftw_plan>(plan_inv_));
  Grid2 out(n_, n_);
  std::memcpy(out.data(), rbuf_, sizeof(double) * n_ * n_);
  return out;
}

GridPtr make_grid(int n, double dealias) { return std::make_shared<const FourierGrid>(n, dealias); }

SpectralField SpectralField::zeros(GridPtr g, int ncomp, double t) {
  SpectralField f;
  f.comp.assign(ncomp, Spec2::Zero(g->nh(), g->n()));
  f.grid = std::move(g);
  f.time = t;
  return f;
}

SpectralField SpectralField::from_physical(GridPtr g, const std::vector<Grid2>& values, double t) {
  SpectralField f;
  for (const auto& v : values) f.comp.push_back(g->forward(v));
  f.grid = std::move(g);
  f.time = t;
  return f;
}

std::vector<Grid2> SpectralField::physical() const {
  std::vector<Grid2> out;
  out.reserve(comp.size());
  for (const auto& c : comp) out.push_back(grid->inverse(c));
  return out;
}

SpectralField& SpectralField::operator+=(const SpectralField& o) {
  for (int c = 0; c < ncomp(); ++c) comp[c] += o.comp[c];
  return *this;
}
SpectralField& SpectralField::operator-=(const SpectralField& o) {
  for (int c = 0; c < ncomp(); ++c) comp[c] -= o.comp[c];
  return *this;
}
SpectralField& SpectralField::operator*=(double a) {
  for (auto& c : comp) c *= a;
  return *this;
}
SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
SpectralField operator*(double s, SpectralField a) { return a *= s; }

double sobolev_norm(const SpectralField& f, double s, bool zero_mean) {
  const auto& g = *f.grid;
  double acc = 0.0;
  for (const auto& c : f.comp)
    for (int j2 = 0; j2 < g.n(); ++j2)
      for (int j1 = 0; j1 < g.nh(); ++j1) {
        double k2 = g.ksq(j1, j2);
        double w;
        if (zero_mean) {
          if (j1 == 0 && j2 == 0) continue;
          w = std::pow(k2, s);
        } else {
          w = std::pow(1.0 + k2, s);
        }
        acc += g.multiplicity(j1) * w * std::norm(c(j1, j2));
      }
  return std::sqrt(acc);
}

double l2_norm(const SpectralField& f) { return sobolev_norm(f, 0.0, false); }

double inner(const SpectralField& a, const SpectralField& b) {
  const auto& g = *a.grid;
  double acc = 0.0;
  for (int c = 0; c < a.ncomp(); ++c)
    for (int j2 = 0; j2 < g.n(); ++j2)
      for (int j1 = 0; j1 < g.nh(); ++j1)
        acc += g.multiplicity(j1) * (a.comp[c](j1, j2) * std::conj(b.comp[c](j1, j2))).real();
  return acc;
}

SpectralField leray_project(const SpectralField& f) {
  SpectralField out = f;
  const auto& g = *f.grid;
  for (int j2 = 0; j2 < g.n(); ++j2)
    for (int j1 = 0; j1 < g.nh(); ++j1) {
      double ksq = g.ksq(j1, j2);
      if (ksq == 0.0) continue;
      double a = g.k1(j1), b = g.k2(j2);
      cplx dot = a * f.comp[0](j1, j2) + b * f.comp[1](j1, j2);
      out.comp[0](j1, j2) -= a * dot / ksq;
      out.comp[1](j1, j2) -= b * dot / ksq;
    }
  return out;
}

double divergence_residual(const SpectralField& f) {
  const auto& g = *f.grid;
  double num = 0.0, den = 0.0;
  for (int j2 = 0; j2 < g.n(); ++j2)
    for (int j1 = 0; j1 < g.nh(); ++j1) {
      double a = g.k1(j1), b = g.k2(j2);
      num = std::max(num, std::abs(a * f.comp[0](j1, j2) + b * f.comp[1](j1, j2)));
      den = std::max(den, std::sqrt(a * a + b * b) *
                              std::sqrt(std::norm(f.comp[0](j1, j2)) + std::norm(f.comp[1](j1, j2))));
    }
  return den == 0.0 ? 0.0 : num / den;
}

bool is_hermitian_consistent(const SpectralField& f, double tol) {
  const auto& g = *f.grid;
  for (const auto& c : f.comp) {
    double scale = c.abs().maxCoeff();
    if (scale == 0.0) continue;
    for (int j1 : {0, g.n() / 2})
      for (int j2 = 0; j2 < g.n(); ++j2) {
        int jm = (g.n() - j2) % g.n();
        if (std::abs(c(j1, j2) - std::conj(c(j1, jm))) > tol * scale) return false;
      }
  }
  return true;
}

SpectralField partial(const SpectralField& f, int axis) {
  SpectralField out = f;
  const auto& g = *f.grid;
  for (auto& c : out.comp)
    for (int j2 = 0; j2 < g.n(); ++j2)
      for (int j1 = 0; j1 < g.nh(); ++j1) {
        if (g.nyquist(j1, j2)) {
          c(j1, j2) = 0.0;
          continue;
        }
        double k = axis == 0 ? g.k1(j1) : g.k2(j2);
        c(j1, j2) *= cplx(0.0, k);
      }
  return out;
}

SpectralField grad(const SpectralField& f) {
  SpectralField out = SpectralField::zeros(f.grid, 2 * f.ncomp(), f.time);
  SpectralField d0 = partial(f, 0), d1 = partial(f, 1);
  for (int i = 0; i < f.ncomp(); ++i) {
    out.comp[2 * i] = d0.comp[i];
    out.comp[2 * i + 1] = d1.comp[i];
  }
  return out;
}

SpectralField curl_2d(const SpectralField& f) {
  SpectralField d0 = partial(f, 0), d1 = partial(f, 1);
  SpectralField out = SpectralField::zeros(f.grid, 1, f.time);
  out.comp[0] = d0.comp[1] - d1.comp[0];
  return out;
}

SpectralField divergence(const SpectralField& f) {
  SpectralField d0 = partial(f, 0), d1 = partial(f, 1);
  SpectralField out = SpectralField::zeros(f.grid, 1, f.time);
  out.comp[0] = d0.comp[0] + d1.comp[1];
  return out;
}

SpectralField dealias_filter(const SpectralField& f) {
  SpectralField out = f;
  const auto& g = *f.grid;
  for (auto& c : out.comp)
    for (int j2 = 0; j2 < g.n(); ++j2)
      for (int j1 = 0; j1 < g.nh(); ++j1)
        if (!g.kept(j1, j2)) c(j1, j2) = 0.0;
  return out;
}

SpectralField advection(const SpectralField& u, const SpectralField& v) {
  SpectralField uf = dealias_filter(u);
  SpectralField vf = dealias_filter(v);
  auto up = uf.physical();
  auto d0 = partial(vf, 0).physical();
  auto d1 = partial(vf, 1).physical();
  std::vector<Grid2> prod;
  for (int j = 0; j < v.ncomp(); ++j) prod.push_back(up[0] * d0[j] + up[1] * d1[j]);
  return dealias_filter(SpectralField::from_physical(u.grid, prod, u.time));
}

SpectralField scalar_times(const Grid2& s, const SpectralField& v) {
  auto vp = dealias_filter(v).physical();
  for (auto& c : vp) c *= s;
  return dealias_filter(SpectralField::from_physical(v.grid, vp, v.time));
}

Eigen::VectorXd evaluate_at(const SpectralField& f, const Vec2& x) {
  const auto& g = *f.grid;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(f.ncomp());
  for (int j2 = 0; j2 < g.n(); ++j2)
    for (int j1 = 0; j1 < g.nh(); ++j1) {
      double ph = g.k1(j1) * x[0] + g.k2(j2) * x[1];
      cplx e(std::cos(ph), std::sin(ph));
      for (int c = 0; c < f.ncomp(); ++c) out[c] += g.multiplicity(j1) * (f.comp[c](j1, j2) * e).real();
    }
  return out;
}

Eigen::VectorXd mean_value(const SpectralField& f) {
  Eigen::VectorXd out(f.ncomp());
  for (int c = 0; c < f.ncomp(); ++c) out[c] = f.comp[c](0, 0).real();
  return out;
}

PhysicalSampler::PhysicalSampler(const SpectralField& f) : n_(f.n()), values_(f.physical()) {}
PhysicalSampler::PhysicalSampler(std::vector<Grid2> values)
    : n_(static_cast<int>(values.at(0).rows())), values_(std::move(values)) {}

namespace {
inline void cubic_weights(double fr, double w[4]) {
  w[0] = -fr * (fr - 1.0) * (fr - 2.0) / 6.0;
  w[1] = (fr + 1.0) * (fr - 1.0) * (fr - 2.0) / 2.0;
  w[2] = -(fr + 1.0) * fr * (fr - 2.0) / 2.0;
  w[3] = (fr + 1.0) * fr * (fr - 1.0) / 6.0;
}
}  // namespace

double PhysicalSampler::sample(int c, const Vec2& x) const {
  const Grid2& v = values_[c];
  double s0 = x[0] * n_, s1 = x[1] * n_;
  double f0 = std::floor(s0), f1 = std::floor(s1);
  double w0[4], w1[4];
  cubic_weights(s0 - f0, w0);
  cubic_weights(s1 - f1, w1);
  long i0 = static_cast<long>(f0), i1 = static_cast<long>(f1);
  double acc = 0.0;
  for (int b = 0; b < 4; ++b) {
    long r1 = ((i1 + b - 1) % n_ + n_) % n_;
    double row = 0.0;
    for (int a = 0; a < 4; ++a) {
      long r0 = ((i0 + a - 1) % n_ + n_) % n_;
      row += w0[a] * v(r0, r1);
    }
    acc += w1[b] * row;
  }
  return acc;
}

Vec2 PhysicalSampler::sample2(const Vec2& x) const { return Vec2(sample(0, x), sample(1, x)); }

double PhysicalSampler::sup_norm() const {
  if (values_.empty()) return 0.0;
  Grid2 mag = Grid2::Zero(n_, n_);
  for (const auto& v : values_) mag += v.square();
  return std::sqrt(mag.maxCoeff());
}

void write_snapshot(const std::string& path, const SpectralField& f, double s_meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  const char magic[4] = {'V', 'N', 'S', 'F'};
  os.write(magic, 4);
  int32_t hdr[3] = {1, f.n(), f.ncomp()};
  os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  double meta[3] = {f.time, s_meta, sobolev_norm(f, s_meta)};
  os.write(reinterpret_cast<const char*>(meta), sizeof(meta));
  for (const auto& c : f.comp)
    for (int j2 = 0; j2 < f.n(); ++j2)
      for (int j1 = 0; j1 < f.grid->nh(); ++j1) {
        double z[2] = {c(j1, j2).real(), c(j1, j2).imag()};
        os.write(reinterpret_cast<const char*>(z), sizeof(z));
      }
}

SpectralField read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "VNSF", 4) != 0) throw Error(ErrorKind::Io, "bad snapshot magic in " + path);
  int32_t hdr[3];
  is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  double meta[3];
  is.read(reinterpret_cast<char*>(meta), sizeof(meta));
  SpectralField f = SpectralField::zeros(make_grid(hdr[1]), hdr[2], meta[0]);
  for (auto& c : f.comp)
    for (int j2 = 0; j2 < f.n(); ++j2)
      for (int j1 = 0; j1 < f.grid->nh(); ++j1) {
        double z[2];
        is.read(reinterpret_cast<char*>(z), sizeof(z));
        c(j1, j2) = cplx(z[0], z[1]);
      }
  if (!is) throw Error(ErrorKind::Io, "truncated snapshot " + path);
  return f;
}

void write_physical_csv(const std::string& path, const SpectralField& f) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  auto p = f.physical();
  os << "x1,x2";
  for (int c = 0; c < f.ncomp(); ++c) os << ",c" << c;
  os << "\n";
  os.precision(17);
  for (int i2 = 0; i2 < f.n(); ++i2)
    for (int i1 = 0; i1 < f.n(); ++i1) {
      os << double(i1) / f.n() << "," << double(i2) / f.n();
      for (int c = 0; c < f.ncomp(); ++c) os << "," << p[c](i1, i2);
      os << "\n";
    }
}

}  // namespace vns
