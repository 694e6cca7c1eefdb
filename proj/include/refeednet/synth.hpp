#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "refeednet/rng.hpp"
#include "refeednet/types.hpp"

namespace refeednet {

/// Generator families. `source` feeds base pre-training, `target` stands in
/// for the deployment corpus and `shifted` for an unseen camera/condition.
enum class Domain { Source, Target, Shifted };

inline const char* to_string(Domain d) {
  switch (d) {
    case Domain::Source: return "source";
    case Domain::Target: return "target";
    case Domain::Shifted: return "shifted";
  }
  return "?";
}

inline std::optional<Domain> parse_domain(std::string_view s) {
  for (Domain d : {Domain::Source, Domain::Target, Domain::Shifted})
    if (s == to_string(d)) return d;
  return std::nullopt;
}

struct VehicleCountRange {
  int lo;
  int hi;
};

// Vehicles drawn per class, indexed by TrafficClass.
inline constexpr std::array<VehicleCountRange, kClassCount> kVehicleCounts = {{{0, 0}, {1, 4}, {5, 10}, {11, 18}}};

struct SceneParams {
  int size = 32;
  int road_top_lo = 8;
  int road_top_hi = 11;
  int road_height = 13;
  double background = 0.40;
  double road = 0.15;
  int vehicle_w_lo = 3;
  int vehicle_w_hi = 4;
  int vehicle_h_lo = 2;
  int vehicle_h_hi = 3;
  double vehicle_lo = 0.70;
  double vehicle_hi = 0.95;
  // Global multiplicative lighting/weather factor.
  double light_lo = 0.85;
  double light_hi = 1.10;
  double noise_sigma = 0.03;
};

/// Generator parameter families per domain. A scene picks one variant
/// uniformly at random.
inline std::vector<SceneParams> scene_variants(Domain d) {
  SceneParams p;
  switch (d) {
    case Domain::Target:
      return {p};
    case Domain::Source:
      p.road_top_lo = 6;
      p.road_top_hi = 12;
      p.road_height = 14;
      p.background = 0.30;
      p.road = 0.10;
      p.vehicle_w_lo = 2;
      p.vehicle_w_hi = 4;
      p.vehicle_h_lo = 2;
      p.vehicle_h_hi = 4;
      p.vehicle_lo = 0.60;
      p.vehicle_hi = 1.00;
      p.light_lo = 0.75;
      p.light_hi = 1.15;
      p.noise_sigma = 0.04;
      return {p};
    case Domain::Shifted:
      // Camera repositioned: road lower in frame, longer vehicles, dimmer light.
      p.road_top_lo = 17;
      p.road_top_hi = 19;
      p.road = 0.20;
      p.vehicle_w_lo = 4;
      p.vehicle_w_hi = 5;
      p.vehicle_h_lo = 2;
      p.vehicle_h_hi = 2;
      p.light_lo = 0.65;
      p.light_hi = 0.90;
      p.noise_sigma = 0.05;
      return {p};
  }
  return {p};
}

namespace detail {

struct Rect {
  int x, y, w, h;
};

inline bool overlaps(const Rect& a, const Rect& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

}  // namespace detail

/// Deterministic grayscale traffic scene: a road band with light vehicle
/// rectangles, global lighting jitter and additive Gaussian noise. Jam scenes
/// pack vehicles so that neighbours overlap.
inline LabeledImage synth_scene(TrafficClass cls, std::uint64_t seed, Domain domain = Domain::Target) {
  Rng rng(mix_seed(seed, 0x5ce0u + 16u * static_cast<unsigned>(domain) + static_cast<unsigned>(cls)));
  const auto variants = scene_variants(domain);
  const SceneParams& p = variants[variants.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(variants.size()))];
  const int n = p.size;
  Tensor img({static_cast<std::size_t>(n), static_cast<std::size_t>(n), 1}, p.background);

  const int road_top = rng.between(p.road_top_lo, p.road_top_hi);
  const int road_bottom = std::min(n, road_top + p.road_height);
  for (int y = road_top; y < road_bottom; ++y)
    for (int x = 0; x < n; ++x) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) = p.road;

  const auto range = kVehicleCounts[static_cast<std::size_t>(index_of(cls))];
  const int count = rng.between(range.lo, range.hi);
  std::vector<detail::Rect> placed;
  for (int v = 0; v < count; ++v) {
    detail::Rect r{};
    r.w = rng.between(p.vehicle_w_lo, p.vehicle_w_hi);
    r.h = rng.between(p.vehicle_h_lo, p.vehicle_h_hi);
    const int max_x = n - r.w;
    const int max_y = road_bottom - r.h;
    if (cls == TrafficClass::Jam && !placed.empty()) {
      // Queue bumper to bumper behind the previous vehicle, overlapping by
      // at most one pixel; a full lane continues on the next one.
      const auto& prev = placed.back();
      r.x = prev.x + prev.w - rng.between(0, 1);
      r.y = std::clamp(prev.y + rng.between(-1, 1), road_top, max_y);
      if (r.x > max_x) {
        r.x = rng.between(0, 2);
        r.y = prev.y + prev.h;
        if (r.y > max_y) r.y = rng.between(road_top, max_y);
      }
    } else {
      // Keep free-flowing vehicles apart where possible.
      for (int attempt = 0; attempt < 20; ++attempt) {
        r.x = rng.between(0, max_x);
        r.y = rng.between(road_top, max_y);
        bool clear = true;
        for (const auto& o : placed) clear = clear && !detail::overlaps({r.x - 1, r.y, r.w + 2, r.h}, o);
        if (clear) break;
      }
    }
    placed.push_back(r);
    const double level = rng.uniform(p.vehicle_lo, p.vehicle_hi);
    for (int y = r.y; y < r.y + r.h; ++y)
      for (int x = r.x; x < r.x + r.w; ++x)
        img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) = level;
  }

  const double light = rng.uniform(p.light_lo, p.light_hi);
  for (double& v : img.data()) v = std::clamp(v * light + p.noise_sigma * rng.normal(), 0.0, 1.0);

  return {std::move(img), cls,
          std::string("synth:") + to_string(domain) + ":" + to_string(cls) + ":" + std::to_string(seed)};
}

/// Balanced synthetic corpus with classes interleaved (item k has class k mod 4).
inline Dataset synth_dataset(std::size_t per_class, std::uint64_t seed, Domain domain) {
  if (per_class == 0) throw Error(ErrorKind::InvalidConfig, "per_class must be >= 1");
  Dataset d;
  const std::uint64_t family = mix_seed(seed, 0xda7a0u + static_cast<unsigned>(domain));
  for (std::size_t i = 0; i < per_class * kClassCount; ++i) {
    const TrafficClass cls = kAllClasses[i % kClassCount];
    auto item = synth_scene(cls, mix_seed(family, i), domain);
    item.source_id += ":" + std::to_string(i);
    d.add(std::move(item));
  }
  return d;
}

}  // namespace refeednet
