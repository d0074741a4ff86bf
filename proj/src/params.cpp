#include "msinfluence/params.hpp"

#include <stdexcept>
#include <unordered_set>

namespace msi {

ParamVector::ParamVector(std::vector<Segment> segments, std::vector<double> data)
    : segments_(std::move(segments)), data_(std::move(data)) {
  std::size_t cursor = 0;
  std::unordered_set<std::string> names;
  for (const Segment& seg : segments_) {
    if (seg.offset != cursor) {
      throw std::invalid_argument("ParamVector: segments must be contiguous and ordered");
    }
    if (!names.insert(seg.name).second) {
      throw std::invalid_argument("ParamVector: duplicate segment name '" + seg.name + "'");
    }
    cursor += seg.length;
  }
  if (cursor != data_.size()) {
    throw std::invalid_argument("ParamVector: segments must cover data exactly");
  }
}

ParamVector ParamVector::zeros(const std::vector<std::pair<std::string, std::size_t>>& layout) {
  std::vector<Segment> segs;
  std::size_t offset = 0;
  for (const auto& [name, len] : layout) {
    segs.push_back(Segment{name, offset, len});
    offset += len;
  }
  return ParamVector(std::move(segs), std::vector<double>(offset, 0.0));
}

bool ParamVector::has_segment(std::string_view name) const {
  for (const Segment& seg : segments_) {
    if (seg.name == name) return true;
  }
  return false;
}

const Segment& ParamVector::segment(std::string_view name) const {
  for (const Segment& seg : segments_) {
    if (seg.name == name) return seg;
  }
  throw std::invalid_argument("ParamVector: unknown segment '" + std::string(name) + "'");
}

std::span<double> ParamVector::slice(std::string_view name) {
  const Segment& seg = segment(name);
  return std::span<double>(data_.data() + seg.offset, seg.length);
}

std::span<const double> ParamVector::slice(std::string_view name) const {
  const Segment& seg = segment(name);
  return std::span<const double>(data_.data() + seg.offset, seg.length);
}

std::size_t ParamVector::total_length(std::span<const std::string> names) const {
  std::size_t total = 0;
  for (const std::string& n : names) total += segment(n).length;
  return total;
}

std::vector<double> ParamVector::gather(std::span<const std::string> names) const {
  std::vector<double> out;
  out.reserve(total_length(names));
  for (const std::string& n : names) {
    auto s = slice(n);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

void ParamVector::scatter(std::span<const std::string> names, std::span<const double> values) {
  if (values.size() != total_length(names)) {
    throw std::invalid_argument("ParamVector::scatter: length mismatch");
  }
  std::size_t cursor = 0;
  for (const std::string& n : names) {
    auto s = slice(n);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = values[cursor + i];
    cursor += s.size();
  }
}

}  // namespace msi
