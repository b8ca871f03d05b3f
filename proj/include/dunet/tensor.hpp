#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dunet/common.hpp"
#include "dunet/random.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Tensor: dense rank-4 array in NCHW order with an optional gradient buffer.
// ---------------------------------------------------------------------------
//
// Scalars are (1,1,1,1), per-channel vectors (1,C,1,1).  The gradient buffer
// is allocated lazily on first use and always matches the value shape.

template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0} {}

  Tensor(int n, int c, int h, int w) : shape_{n, c, h, w} {
    validate_shape();
    data_.assign(numel(), T(0));
  }

  static Tensor scalar(T v) {
    Tensor t(1, 1, 1, 1);
    t.data_[0] = v;
    return t;
  }

  static Tensor full(int n, int c, int h, int w, T v) {
    Tensor t(n, c, h, w);
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }

  std::size_t numel() const {
    return static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2] * shape_[3];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  // Pointer to the (c,h,w) slab of sample n.
  T* sample(int n) { return data_.data() + index(n, 0, 0, 0); }
  const T* sample(int n) const { return data_.data() + index(n, 0, 0, 0); }

  std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
  std::size_t sample_stride() const { return static_cast<std::size_t>(shape_[1]) * plane(); }

  // --- gradient buffer -----------------------------------------------------

  bool has_grad() const { return !grad_.empty(); }

  std::vector<T>& grad() {
    if (grad_.empty()) grad_.assign(numel(), T(0));
    return grad_;
  }
  const std::vector<T>& grad() const { return grad_; }

  T* grad_data() { return grad().data(); }

  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
  }

  void drop_grad() { grad_.clear(); }

  // --- initialisation ------------------------------------------------------

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void fill_normal(Rng& rng, double mean, double stddev) {
    for (auto& v : data_) v = static_cast<T>(rng.normal(mean, stddev));
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : data_) v = static_cast<T>(rng.uniform(lo, hi));
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out.vec()[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  // --- serialisation -------------------------------------------------------
  //
  // Layout (little-endian): magic "DUT1", four uint32 dims (N,C,H,W), then
  // N*C*H*W float32 values in row-major NCHW order.  Values are stored as
  // float32 regardless of T.

  void dump(std::ostream& os) const {
    os.write("DUT1", 4);
    for (int d : shape_) {
      const std::uint32_t v = static_cast<std::uint32_t>(d);
      write_u32(os, v);
    }
    for (const T& v : data_) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(os, bits);
    }
    if (!os) throw IoError("tensor dump: write failed");
  }

  void dump_file(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("tensor dump: cannot open " + path);
    dump(os);
  }

  static Tensor load(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DUT1", 4) != 0) {
      throw ParseError("tensor load: bad magic");
    }
    std::array<int, 4> shape;
    for (int& d : shape) {
      d = static_cast<int>(read_u32(is));
    }
    Tensor t(shape[0], shape[1], shape[2], shape[3]);
    for (T& v : t.data_) {
      const std::uint32_t bits = read_u32(is);
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<T>(f);
    }
    if (!is) throw ParseError("tensor load: truncated payload");
    return t;
  }

  static Tensor load_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("tensor load: cannot open " + path);
    return load(is);
  }

 private:
  void validate_shape() const {
    static const char* axes[4] = {"batch", "channels", "height", "width"};
    for (int i = 0; i < 4; ++i) {
      if (shape_[i] <= 0) {
        throw ShapeError(axes[i], std::string("tensor: non-positive ") + axes[i] +
                                      " dimension " + std::to_string(shape_[i]));
      }
    }
  }

  static void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }

  static std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("tensor load: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::array<int, 4> shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

}  // namespace dunet
