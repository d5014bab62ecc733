#include "gem/param_vector.hpp"

#include <algorithm>
#include <cmath>

#include "gem/error.hpp"

namespace gem {

std::string Segment::shape_string() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

ParamLayout::ParamLayout(const std::vector<SegmentShape>& shapes) {
  segments_.reserve(shapes.size());
  for (const auto& s : shapes) {
    if (has(s.name)) throw ConfigError("duplicate parameter segment '" + s.name + "'");
    segments_.push_back(Segment{s.name, s.rows, s.cols, total_});
    total_ += s.rows * s.cols;
  }
}

const Segment& ParamLayout::find(const std::string& name) const {
  for (const auto& seg : segments_) {
    if (seg.name == name) return seg;
  }
  throw ConfigError("no parameter segment named '" + name + "'");
}

bool ParamLayout::has(const std::string& name) const {
  return std::any_of(segments_.begin(), segments_.end(),
                     [&](const Segment& s) { return s.name == name; });
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& a = segments_[i];
    const auto& b = other.segments_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

LayoutPtr make_layout(const std::vector<ParamLayout::SegmentShape>& shapes) {
  return std::make_shared<const ParamLayout>(shapes);
}

ParamVector::ParamVector(LayoutPtr layout)
    : layout_(std::move(layout)), values_(layout_ ? layout_->total_size() : 0, 0.0) {}

ParamVector::ParamVector(LayoutPtr layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_ || values_.size() != layout_->total_size()) {
    throw ConfigError("parameter value count does not match layout");
  }
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

std::span<double> ParamVector::segment(const std::string& name) {
  const Segment& seg = layout_->find(name);
  return std::span<double>(values_).subspan(seg.offset, seg.size());
}

std::span<const double> ParamVector::segment(const std::string& name) const {
  const Segment& seg = layout_->find(name);
  return std::span<const double>(values_).subspan(seg.offset, seg.size());
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ParamVector::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void ParamVector::add_scaled(const ParamVector& other, double scale) {
  if (!same_layout(other)) throw ConfigError("add_scaled: layout mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

double ParamVector::squared_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  return acc;
}

bool ParamVector::operator==(const ParamVector& other) const {
  return same_layout(other) && values_ == other.values_;
}

}  // namespace gem
