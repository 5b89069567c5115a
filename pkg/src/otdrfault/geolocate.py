"""Map fiber chainage onto a surveyed route.

Within a segment, latitude and longitude are interpolated linearly by
chainage fraction.  For segments of a few kilometers the departure from the
great circle is far below a meter, well under OTDR localization error.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .plant import ValidationError

EARTH_RADIUS_M = 6_371_000.0
SLACK_TOLERANCE = 0.25


def _check_coord(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0) or math.isnan(lat + lon):
        raise ValueError(f"invalid coordinate ({lat}, {lon})")


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between ``(lat, lon)`` points in degrees."""
    lat1, lon1 = a
    lat2, lon2 = b
    _check_coord(lat1, lon1)
    _check_coord(lat2, lon2)
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


@dataclass(frozen=True)
class Vertex:
    lat: float
    lon: float
    chainage_m: float


@dataclass(frozen=True)
class RoutePolyline:
    vertices: tuple[Vertex, ...]
    slack_factor: float = 1.02

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise ValidationError(problems)

    def violations(self) -> list[str]:
        out = []
        if len(self.vertices) < 2:
            return ["route needs at least two vertices"]
        if not self.slack_factor >= 1.0:
            out.append("slack_factor must be >= 1")
        for v in self.vertices:
            try:
                _check_coord(v.lat, v.lon)
            except ValueError as exc:
                out.append(str(exc))
        if out:
            return out
        if self.vertices[0].chainage_m != 0:
            out.append("first chainage must be 0")
        for a, b in zip(self.vertices, self.vertices[1:]):
            dc = b.chainage_m - a.chainage_m
            if not dc > 0:
                out.append(f"chainage not strictly increasing at {b.chainage_m} m")
                continue
            expected = self.slack_factor * haversine_m((a.lat, a.lon), (b.lat, b.lon))
            if abs(dc - expected) > SLACK_TOLERANCE * expected:
                out.append(
                    f"segment ending at {b.chainage_m} m: chainage step {dc:.1f} m is not within "
                    f"25% of slack-scaled length {expected:.1f} m"
                )
        return out

    @property
    def length_m(self) -> float:
        return self.vertices[-1].chainage_m

    def chainages(self) -> list[float]:
        return [v.chainage_m for v in self.vertices]

    def to_dict(self) -> dict[str, Any]:
        return {
            "slack_factor": self.slack_factor,
            "vertices": [{"lat": v.lat, "lon": v.lon, "chainage_m": v.chainage_m} for v in self.vertices],
        }


def build_route(waypoints: Sequence[tuple[float, float]], slack_factor: float = 1.02) -> RoutePolyline:
    """Chainage each waypoint by slack-scaled cumulative haversine length."""
    if len(waypoints) < 2:
        raise ValidationError("route needs at least two waypoints")
    verts = [Vertex(float(waypoints[0][0]), float(waypoints[0][1]), 0.0)]
    for k, (a, b) in enumerate(zip(waypoints, waypoints[1:]), start=1):
        seg = haversine_m(a, b)
        if seg == 0.0:
            raise ValidationError(f"zero-length segment between waypoints {k - 1} and {k}")
        verts.append(Vertex(float(b[0]), float(b[1]), verts[-1].chainage_m + slack_factor * seg))
    return RoutePolyline(tuple(verts), slack_factor)


def locate_fault(route: RoutePolyline, fiber_distance_m: float) -> tuple[float, float]:
    """``(lat, lon)`` of the point ``fiber_distance_m`` along the fiber."""
    if not route.vertices:
        raise ValueError("empty route")
    d = float(fiber_distance_m)
    if math.isnan(d) or d < 0:
        raise ValueError(f"fiber distance {d} m is negative")
    if d > route.length_m:
        raise ValueError(f"fault beyond route end ({d:.1f} m > {route.length_m:.1f} m)")
    ch = route.chainages()
    i = bisect.bisect_right(ch, d) - 1
    v0 = route.vertices[i]
    if d == v0.chainage_m or i == len(ch) - 1:
        return v0.lat, v0.lon
    v1 = route.vertices[i + 1]
    f = (d - v0.chainage_m) / (v1.chainage_m - v0.chainage_m)
    return v0.lat + f * (v1.lat - v0.lat), v0.lon + f * (v1.lon - v0.lon)


def route_from_dict(d: Mapping[str, Any]) -> RoutePolyline:
    slack = float(d.get("slack_factor", 1.02))
    if "vertices" in d:
        verts = tuple(Vertex(float(v["lat"]), float(v["lon"]), float(v["chainage_m"])) for v in d["vertices"])
        return RoutePolyline(verts, slack)
    if "waypoints" in d:
        return build_route([(float(w["lat"]), float(w["lon"])) for w in d["waypoints"]], slack)
    raise ValidationError("route file needs 'waypoints' or 'vertices'")


def route_from_json(text: str) -> RoutePolyline:
    return route_from_dict(json.loads(text))
