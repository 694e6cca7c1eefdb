#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refeednet/error.hpp"
#include "refeednet/tensor.hpp"

namespace refeednet {

inline constexpr std::size_t kClassCount = 4;

enum class TrafficClass : int { Empty = 0, Fluid = 1, Heavy = 2, Jam = 3 };

inline constexpr std::array<TrafficClass, kClassCount> kAllClasses = {
    TrafficClass::Empty, TrafficClass::Fluid, TrafficClass::Heavy, TrafficClass::Jam};

inline const char* to_string(TrafficClass c) {
  switch (c) {
    case TrafficClass::Empty: return "Empty";
    case TrafficClass::Fluid: return "Fluid";
    case TrafficClass::Heavy: return "Heavy";
    case TrafficClass::Jam: return "Jam";
  }
  return "?";
}

inline std::optional<TrafficClass> parse_class(std::string_view s) {
  for (TrafficClass c : kAllClasses)
    if (s == to_string(c)) return c;
  return std::nullopt;
}

inline TrafficClass class_from_index(int i) {
  if (i < 0 || i >= static_cast<int>(kClassCount))
    throw Error(ErrorKind::Range, "class index " + std::to_string(i) + " outside 0..3");
  return static_cast<TrafficClass>(i);
}

inline int index_of(TrafficClass c) { return static_cast<int>(c); }

/// An image (H x W x C, values in [0,1]) with its ground-truth class.
struct LabeledImage {
  Tensor pixels;
  TrafficClass label = TrafficClass::Empty;
  std::string source_id;

  std::size_t height() const { return pixels.shape()[0]; }
  std::size_t width() const { return pixels.shape()[1]; }
  std::size_t channels() const { return pixels.shape()[2]; }

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

inline void validate_image(const Tensor& pixels) {
  const Shape& s = pixels.shape();
  if (s.size() != 3 || s[0] < 8 || s[1] < 8 || (s[2] != 1 && s[2] != 3))
    throw Error(ErrorKind::InputShape, "image must be HxWxC with H,W >= 8 and C in {1,3}, got " +
                                           shape_string(s));
  for (double v : pixels.data())
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::Range, "pixel value outside [0,1]");
}

/// Ordered collection of labeled images; order is load or generation order.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledImage> items) : items_(std::move(items)) {}

  void add(LabeledImage item) { items_.push_back(std::move(item)); }

  const std::vector<LabeledImage>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const LabeledImage& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::array<std::size_t, kClassCount> class_counts() const {
    std::array<std::size_t, kClassCount> counts{};
    for (const auto& it : items_) ++counts[static_cast<std::size_t>(index_of(it.label))];
    return counts;
  }

 private:
  std::vector<LabeledImage> items_;
};

}  // namespace refeednet
