#pragma once

// Dense real linear algebra for small problems (dimensions up to a few
// hundred). Matrices are row-major; vec() is column-stacking throughout, so
// vec(A X B) = kron(B^T, A) vec(X) and in particular
// vec(A X A^T) = kron(A, A) vec(X).

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mstab {

/// Raised when an iterative kernel exhausts its iteration cap.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static Matrix identity(std::size_t n);
  static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix diagonal(std::span<const double> d);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }
  bool empty() const { return entries_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }

  std::span<double> entries() { return entries_; }
  std::span<const double> entries() const { return entries_; }

  Matrix transpose() const;
  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  void set_block(std::size_t r0, std::size_t c0, const Matrix& b);
  void add_block(std::size_t r0, std::size_t c0, const Matrix& b, double scale = 1.0);

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator*(double s, Matrix a);
std::vector<double> operator*(const Matrix& a, std::span<const double> x);

/// Symmetric matrix. Every write goes to both (i,j) and (j,i), so the stored
/// entries are exactly symmetric.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t dim, double diag = 0.0);

  static SymMatrix identity(std::size_t n) { return SymMatrix(n, 1.0); }
  /// Accepts m when |m - m^T| <= tol * max(1, max|m|) entrywise, then stores
  /// the symmetric part. Throws std::invalid_argument otherwise.
  static SymMatrix from_matrix(const Matrix& m, double tol = 1e-9);
  /// Stores (m + m^T)/2 unconditionally.
  static SymMatrix symmetric_part(const Matrix& m);

  std::size_t dim() const { return m_.rows(); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  void set(std::size_t i, std::size_t j, double v);
  const Matrix& matrix() const { return m_; }

  bool operator==(const SymMatrix& o) const = default;

 private:
  Matrix m_;
};

/// Thrown for shape mismatches.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Matrix kron(const Matrix& a, const Matrix& b);

/// Column-stacking vectorization.
std::vector<double> vec(const Matrix& m);
Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols);

double trace(const Matrix& m);
double max_abs(const Matrix& m);
double frobenius_norm(const Matrix& m);
bool all_finite(const Matrix& m);

/// He(m) = m + m^T.
SymMatrix he(const Matrix& m);

/// All eigenvalues of a general real square matrix: balancing, Hessenberg
/// reduction, then Francis double-shift QR with 2x2 deflation.
/// Throws NumericalError after 100*dim total QR iterations.
std::vector<std::complex<double>> eigenvalues(const Matrix& m);

/// max |eigenvalue|. Entrywise nonnegative inputs take a Perron power
/// iteration bounded by Collatz-Wielandt quotients, falling back to QR.
double spectral_radius(const Matrix& m);

struct EigExtremes {
  double min_eig;
  double max_eig;
};

struct SymEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column k pairs with values[k]
};

/// Cyclic Jacobi. Throws NumericalError if 30 sweeps do not converge.
SymEigen sym_eigen(const SymMatrix& s);
EigExtremes sym_eig_extremes(const SymMatrix& s);

/// Solves a x = b by partial-pivot LU. Throws NumericalError when singular.
std::vector<double> solve(Matrix a, std::vector<double> b);

std::string to_string(const Matrix& m);

}  // namespace mstab
