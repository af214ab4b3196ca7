#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace crfmatch {

enum class Crs { WGS84, PlanarMeters };

constexpr std::string_view to_string(Crs crs) noexcept
{
    return crs == Crs::WGS84 ? "WGS84" : "PlanarMeters";
}

/// A coordinate pair. For WGS84, x is longitude and y latitude in degrees;
/// for PlanarMeters both are meters in an arbitrary Cartesian frame.
struct GeoPoint
{
    double x = 0.0;
    double y = 0.0;
    Crs crs = Crs::PlanarMeters;

    friend bool operator==(const GeoPoint &, const GeoPoint &) = default;
};

inline constexpr double kEarthRadiusMeters = 6'371'000.0;

namespace detail {

constexpr double deg2rad(double deg) noexcept { return deg * std::numbers::pi / 180.0; }
constexpr double rad2deg(double rad) noexcept { return rad * 180.0 / std::numbers::pi; }

inline double haversine(const GeoPoint &a, const GeoPoint &b) noexcept
{
    const double lat1 = deg2rad(a.y);
    const double lat2 = deg2rad(b.y);
    const double dlat = lat2 - lat1;
    const double dlon = deg2rad(b.x - a.x);
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
    return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(std::min(1.0, h)));
}

} // namespace detail

/// Great-circle (spherical) distance for WGS84, Euclidean distance for planar points.
inline double distance(const GeoPoint &a, const GeoPoint &b)
{
    if (a.crs != b.crs)
        throw std::invalid_argument("distance: points use different coordinate systems");
    if (a.crs == Crs::PlanarMeters)
        return std::hypot(b.x - a.x, b.y - a.y);
    return detail::haversine(a, b);
}

struct Vec2
{
    double east = 0.0;
    double north = 0.0;
};

/// Local east/north tangent frame anchored at a point. Identity for planar
/// coordinates, equirectangular for WGS84 (accurate at the scale of a few
/// kilometers, which is all projection and turn geometry need).
class LocalFrame
{
  public:
    explicit LocalFrame(const GeoPoint &origin)
        : origin_(origin),
          meters_per_deg_y_(origin.crs == Crs::WGS84 ? detail::deg2rad(1.0) * kEarthRadiusMeters : 1.0),
          meters_per_deg_x_(origin.crs == Crs::WGS84 ? meters_per_deg_y_ * std::cos(detail::deg2rad(origin.y))
                                                     : 1.0)
    {
    }

    Vec2 to_local(const GeoPoint &p) const noexcept
    {
        return {(p.x - origin_.x) * meters_per_deg_x_, (p.y - origin_.y) * meters_per_deg_y_};
    }

    GeoPoint from_local(const Vec2 &v) const noexcept
    {
        return {origin_.x + v.east / meters_per_deg_x_, origin_.y + v.north / meters_per_deg_y_, origin_.crs};
    }

  private:
    GeoPoint origin_;
    double meters_per_deg_y_;
    double meters_per_deg_x_;
};

/// Heading of the direction a->b in degrees, counterclockwise from east.
inline double heading_deg(const GeoPoint &a, const GeoPoint &b)
{
    const LocalFrame frame(a);
    const Vec2 v = frame.to_local(b);
    return detail::rad2deg(std::atan2(v.north, v.east));
}

/// Wraps an angle difference into (-180, 180].
inline double wrap_angle_deg(double deg) noexcept
{
    deg = std::fmod(deg, 360.0);
    if (deg <= -180.0)
        deg += 360.0;
    else if (deg > 180.0)
        deg -= 360.0;
    return deg;
}

struct SegmentProjection
{
    double fraction = 0.0; // in [0, 1] along a->b
    GeoPoint foot;
};

/// Closest point to `g` on the segment [a, b].
inline SegmentProjection project_on_segment(const GeoPoint &g, const GeoPoint &a, const GeoPoint &b)
{
    const LocalFrame frame(g);
    const Vec2 la = frame.to_local(a);
    const Vec2 lb = frame.to_local(b);
    const double dx = lb.east - la.east;
    const double dy = lb.north - la.north;
    const double len2 = dx * dx + dy * dy;
    double t = 0.0;
    if (len2 > 0.0)
        t = std::clamp(-(la.east * dx + la.north * dy) / len2, 0.0, 1.0);
    if (t == 0.0)
        return {0.0, a};
    if (t == 1.0)
        return {1.0, b};
    return {t, frame.from_local({la.east + t * dx, la.north + t * dy})};
}

} // namespace crfmatch
