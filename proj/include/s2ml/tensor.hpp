#pragma once

// Dense row-major tensor with a small dynamic shape, plus the deterministic
// RNG used everywhere (std distributions are implementation-defined, so
// uniform/normal are mapped from raw mt19937_64 output by hand).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace s2ml {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(numel_of(shape_), fill) {}
  Tensor(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<std::size_t>(numel_of(shape_)) == data_.size(),
          "Tensor: data size does not match shape");
  }

  static long numel_of(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      check(d > 0, "Tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](long i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](long i) const { return data_[static_cast<std::size_t>(i)]; }

  // [C,H,W] accessors
  T& at(int c, int h, int w) { return data_[idx3(c, h, w)]; }
  const T& at(int c, int h, int w) const { return data_[idx3(c, h, w)]; }
  // [H,W] accessors
  T& at(int h, int w) { return data_[idx2(h, w)]; }
  const T& at(int h, int w) const { return data_[idx2(h, w)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (long i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

 private:
  long idx3(int c, int h, int w) const {
    return (static_cast<long>(c) * shape_[1] + h) * shape_[2] + w;
  }
  long idx2(int h, int w) const { return static_cast<long>(h) * shape_[1] + w; }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// Deterministic RNG. mt19937_64's bit stream is pinned by the standard; the
// mappings below keep generated data bit-identical across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {
    // splitmix64 warm-up so nearby seeds decorrelate
    for (int i = 0; i < 4; ++i) next();
  }

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  int uniform_int(int n) {  // [0, n)
    check(n > 0, "Rng::uniform_int: n must be positive");
    return static_cast<int>(next() % static_cast<std::uint64_t>(n));
  }

  std::uint64_t fork(std::uint64_t stream) {
    // child seed for an independent, reproducible stream
    Rng child(state_ ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
    return child.next();
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

template <typename T>
Tensor<T> randn(std::vector<int> shape, Rng& rng, double std_dev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std_dev);
  return t;
}

}  // namespace s2ml
