#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace msi {

// Reserved segment names for the shared / pretrain-head / finetune-head
// parameter blocks.
inline constexpr const char* kSegW = "W";
inline constexpr const char* kSegU = "U";
inline constexpr const char* kSegTheta = "Theta";

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

// Flat parameter store with a named segment map. Segments are disjoint,
// contiguous, cover the data exactly, and have unique names; zero-length
// segments are allowed (e.g. an identity pretrain head has an empty U).
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<Segment> segments, std::vector<double> data);

  // Zero-initialized storage for the given (name, length) layout.
  static ParamVector zeros(const std::vector<std::pair<std::string, std::size_t>>& layout);

  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool has_segment(std::string_view name) const;
  const Segment& segment(std::string_view name) const;
  const std::vector<Segment>& segments() const { return segments_; }

  std::span<double> slice(std::string_view name);
  std::span<const double> slice(std::string_view name) const;

  // Total length over a list of segment names (in the given order).
  std::size_t total_length(std::span<const std::string> names) const;

  // Concatenated copy of the named segments, in the given order.
  std::vector<double> gather(std::span<const std::string> names) const;

  // Writes a concatenated vector back into the named segments.
  void scatter(std::span<const std::string> names, std::span<const double> values);

 private:
  std::vector<Segment> segments_;
  std::vector<double> data_;
};

}  // namespace msi
