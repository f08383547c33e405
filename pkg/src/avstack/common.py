"""Geometric and kinematic value types shared across the stack, UTM projection."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_WHEELBASE = 2.85


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    elif r > math.pi:
        r -= 2.0 * math.pi
    return r


def normalize_angles(a: np.ndarray) -> np.ndarray:
    r = np.fmod(np.asarray(a, dtype=float), 2.0 * np.pi)
    r = np.where(r <= -np.pi, r + 2.0 * np.pi, r)
    return np.where(r > np.pi, r - 2.0 * np.pi, r)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def to_world(self, px: float, py: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * px - s * py, self.y + s * px + c * py

    def to_local(self, wx: float, wy: float) -> tuple[float, float]:
        dx, dy = wx - self.x, wy - self.y
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * dx + s * dy, -s * dx + c * dy


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float
    color: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError("non-finite point coordinate")


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2D = field(default_factory=Pose2D)
    v: float = 0.0
    steer: float = 0.0
    wheelbase: float = DEFAULT_WHEELBASE
    max_steer: float = 0.55

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if abs(self.steer) > self.max_steer + 1e-12:
            raise ValueError(f"steer {self.steer} exceeds limit {self.max_steer}")

    @property
    def kappa(self) -> float:
        return math.tan(self.steer) / self.wheelbase


class PointCloud:
    """N x 3 array of points with optional N x 3 colours in [0, 1].

    Binary layout (``to_bytes``): little-endian uint32 count, then count
    records of three float32 (x, y, z). Colours are not serialized.
    """

    __slots__ = ("xyz", "rgb")

    def __init__(self, xyz=None, rgb=None):
        xyz = np.zeros((0, 3)) if xyz is None else np.asarray(xyz, dtype=float)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got {xyz.shape}")
        if rgb is not None:
            rgb = np.asarray(rgb, dtype=float)
            if rgb.shape != xyz.shape:
                raise ValueError("colour array must match point array shape")
        self.xyz = xyz
        self.rgb = rgb

    def __len__(self):
        return len(self.xyz)

    def __repr__(self):
        return f"PointCloud(n={len(self)})"

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], None if self.rgb is None else self.rgb[idx])

    def to_bytes(self) -> bytes:
        return struct.pack("<I", len(self)) + self.xyz.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PointCloud":
        (n,) = struct.unpack_from("<I", data, 0)
        if len(data) != 4 + 12 * n:
            raise ValueError(f"point cloud payload size mismatch: header says {n} points")
        xyz = np.frombuffer(data, dtype="<f4", count=3 * n, offset=4).reshape(n, 3)
        return cls(xyz.astype(float))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PointCloud":
        return cls.from_bytes(Path(path).read_bytes())


# --- UTM (WGS-84), Krueger series to sixth order in n ---

_A_AXIS = 6378137.0
_FLAT = 1.0 / 298.257223563
_K0 = 0.9996
_FALSE_EASTING = 500000.0
_FALSE_NORTHING_SOUTH = 10000000.0

_n = _FLAT / (2.0 - _FLAT)
_ECC = math.sqrt(_FLAT * (2.0 - _FLAT))
_RECT = _A_AXIS / (1.0 + _n) * (1.0 + _n**2 / 4.0 + _n**4 / 64.0 + _n**6 / 256.0)
_ALPHA = (
    _n / 2 - 2 * _n**2 / 3 + 5 * _n**3 / 16 + 41 * _n**4 / 180 - 127 * _n**5 / 288 + 7891 * _n**6 / 37800,
    13 * _n**2 / 48 - 3 * _n**3 / 5 + 557 * _n**4 / 1440 + 281 * _n**5 / 630 - 1983433 * _n**6 / 1935360,
    61 * _n**3 / 240 - 103 * _n**4 / 140 + 15061 * _n**5 / 26880 + 167603 * _n**6 / 181440,
    49561 * _n**4 / 161280 - 179 * _n**5 / 168 + 6601661 * _n**6 / 7257600,
    34729 * _n**5 / 80640 - 3418889 * _n**6 / 1995840,
    212378941 * _n**6 / 319334400,
)
_BETA = (
    _n / 2 - 2 * _n**2 / 3 + 37 * _n**3 / 96 - _n**4 / 360 - 81 * _n**5 / 512 + 96199 * _n**6 / 604800,
    _n**2 / 48 + _n**3 / 15 - 437 * _n**4 / 1440 + 46 * _n**5 / 105 - 1118711 * _n**6 / 3870720,
    17 * _n**3 / 480 - 37 * _n**4 / 840 - 209 * _n**5 / 4480 + 5569 * _n**6 / 90720,
    4397 * _n**4 / 161280 - 11 * _n**5 / 504 - 830251 * _n**6 / 7257600,
    4583 * _n**5 / 161280 - 108847 * _n**6 / 3991680,
    20648693 * _n**6 / 638668800,
)


def utm_zone(lon: float) -> int:
    """Standard 6-degree zone number (Norway/Svalbard exceptions not applied)."""
    return min(int(math.floor((lon + 180.0) / 6.0)) + 1, 60)


def central_meridian(zone: int) -> float:
    return -183.0 + 6.0 * zone


def geo_to_utm(p: GeoPoint, zone: int | None = None) -> tuple[float, float, int, bool]:
    """Project to UTM; returns (easting, northing, zone, south).

    ``zone`` forces projection into a given zone, which keeps a local world
    frame continuous across zone borders.
    """
    if abs(p.lat) > 84.0:
        raise ValueError(f"latitude {p.lat} outside UTM validity band")
    if zone is None:
        zone = utm_zone(p.lon)
    phi = math.radians(p.lat)
    lam = math.radians(p.lon - central_meridian(zone))
    lam = math.atan2(math.sin(lam), math.cos(lam))
    sphi = math.sin(phi)
    c = 2.0 * math.sqrt(_n) / (1.0 + _n)
    t = math.sinh(math.atanh(sphi) - c * math.atanh(c * sphi))
    xi_p = math.atan2(t, math.cos(lam))
    eta_p = math.atanh(math.sin(lam) / math.sqrt(1.0 + t * t))
    xi, eta = xi_p, eta_p
    for j, a in enumerate(_ALPHA, start=1):
        xi += a * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
        eta += a * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)
    easting = _FALSE_EASTING + _K0 * _RECT * eta
    northing = _K0 * _RECT * xi
    south = p.lat < 0.0
    if south:
        northing += _FALSE_NORTHING_SOUTH
    return easting, northing, zone, south


def utm_to_geo(easting: float, northing: float, zone: int, south: bool, alt: float = 0.0) -> GeoPoint:
    if not 1 <= zone <= 60:
        raise ValueError(f"invalid UTM zone {zone}")
    if south:
        northing -= _FALSE_NORTHING_SOUTH
    xi = northing / (_K0 * _RECT)
    eta = (easting - _FALSE_EASTING) / (_K0 * _RECT)
    xi_p, eta_p = xi, eta
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * math.sin(2 * j * xi) * math.cosh(2 * j * eta)
        eta_p -= b * math.cos(2 * j * xi) * math.sinh(2 * j * eta)
    tau_p = math.sin(xi_p) / math.hypot(math.sinh(eta_p), math.cos(xi_p))
    lam = math.atan2(math.sinh(eta_p), math.cos(xi_p))
    # Newton iteration for tan(latitude) from the conformal tangent
    e2 = _ECC * _ECC
    tau = tau_p
    for _ in range(8):
        sig = math.sinh(_ECC * math.atanh(_ECC * tau / math.sqrt(1.0 + tau * tau)))
        tau_i = tau * math.sqrt(1.0 + sig * sig) - sig * math.sqrt(1.0 + tau * tau)
        d = (tau_p - tau_i) / math.sqrt(1.0 + tau_i * tau_i) * (1.0 + (1.0 - e2) * tau * tau) / (
            (1.0 - e2) * math.sqrt(1.0 + tau * tau)
        )
        tau += d
        if abs(d) < 1e-15:
            break
    lat = math.degrees(math.atan(tau))
    lon = central_meridian(zone) + math.degrees(lam)
    lon = (lon + 180.0) % 360.0 - 180.0
    return GeoPoint(lat, lon, alt)
