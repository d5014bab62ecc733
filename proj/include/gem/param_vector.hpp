#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gem {

/// One named, contiguous block of a flat parameter array.
struct Segment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
  std::string shape_string() const;
};

/// Immutable ordered list of segments. Shared between a parameter vector and
/// every gradient / optimizer buffer that mirrors it.
class ParamLayout {
 public:
  struct SegmentShape {
    std::string name;
    std::size_t rows;
    std::size_t cols;
  };

  explicit ParamLayout(const std::vector<SegmentShape>& shapes);

  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_; }
  const Segment& find(const std::string& name) const;
  bool has(const std::string& name) const;

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

LayoutPtr make_layout(const std::vector<ParamLayout::SegmentShape>& shapes);

/// Flat array of 64-bit reals plus its segment layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(LayoutPtr layout);
  ParamVector(LayoutPtr layout, std::vector<double> values);

  static ParamVector zeros_like(const ParamVector& other) { return ParamVector(other.layout_); }

  std::size_t size() const { return values_.size(); }
  const ParamLayout& layout() const { return *layout_; }
  const LayoutPtr& layout_ptr() const { return layout_; }
  bool same_layout(const ParamVector& other) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> segment(const std::string& name);
  std::span<const double> segment(const std::string& name) const;

  bool all_finite() const;
  void set_zero();
  /// this += scale * other
  void add_scaled(const ParamVector& other, double scale);
  double squared_norm() const;

  bool operator==(const ParamVector& other) const;

 private:
  LayoutPtr layout_;
  std::vector<double> values_;
};

}  // namespace gem
