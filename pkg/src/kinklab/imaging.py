"""Camera projection and time-integrated fluorescence images.

The camera frame is obtained by first rotating by ``azimuth`` about the trap
z axis and then tilting by ``elevation`` about the (rotated) trap axis x'.
Image coordinates are ``u = x'`` and ``v = cos(el) y' + sin(el) z'``, so at
zero angles ``(u, v) = (x, y)`` and a camera at elevation -45 deg looks
face-on at crystals lying in the ``y = -z`` plane.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .model import Configuration

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraModel:
    """Orientation (degrees), pixel size and Gaussian PSF width (length units)."""

    azimuth: float = 0.0
    elevation: float = 0.0
    pixel_size: float = 0.8e-6
    psf_sigma: float | None = None
    shape: tuple[int, int] = (128, 512)
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ValueError("pixel size must be positive")
        if self.psf_sigma is not None and not self.psf_sigma > 0:
            raise ValueError("psf sigma must be positive")

    @property
    def sigma(self) -> float:
        return self.psf_sigma if self.psf_sigma is not None else self.pixel_size

    def rotation(self) -> np.ndarray:
        """3x3 matrix whose first two rows map trap coordinates to (u, v)."""
        a, e = np.radians(self.azimuth), np.radians(self.elevation)
        rz = np.array([[np.cos(a), -np.sin(a), 0.0],
                       [np.sin(a), np.cos(a), 0.0],
                       [0.0, 0.0, 1.0]])
        rx = np.array([[1.0, 0.0, 0.0],
                       [0.0, np.cos(e), np.sin(e)],
                       [0.0, -np.sin(e), np.cos(e)]])
        return rx @ rz


def project(points, camera: CameraModel) -> np.ndarray:
    """Orthographic projection of (..., 3) points to (..., 2) image-plane coordinates."""
    p = np.asarray(points, dtype=float)
    return p @ camera.rotation()[:2].T


@dataclass
class IntegrationImage:
    data: np.ndarray
    camera: CameraModel
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.data.sum())

    def to_pixels(self, uv: np.ndarray) -> np.ndarray:
        """Image-plane coordinates to (column, row) pixel coordinates."""
        h, w = self.data.shape
        c = self.camera
        col = (uv[..., 0] - c.center[0]) / c.pixel_size + (w - 1) / 2
        row = (uv[..., 1] - c.center[1]) / c.pixel_size + (h - 1) / 2
        return np.stack([col, row], axis=-1)

    def to_plane(self, px: np.ndarray) -> np.ndarray:
        h, w = self.data.shape
        c = self.camera
        u = (px[..., 0] - (w - 1) / 2) * c.pixel_size + c.center[0]
        v = (px[..., 1] - (h - 1) / 2) * c.pixel_size + c.center[1]
        return np.stack([u, v], axis=-1)

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """16-bit binary PGM plus a JSON sidecar with the intensity scale."""
        path = Path(path)
        scale = 65535.0 / self.data.max() if self.data.max() > 0 else 1.0
        img = np.round(self.data * scale).astype(">u2")
        h, w = img.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n65535\n".encode())
            fh.write(img.tobytes())
        side = path.with_suffix(".json")
        meta = {"camera": asdict(self.camera), "intensity_per_count": 1.0 / scale,
                "shape": [h, w], **self.meta}
        side.write_text(json.dumps(meta, indent=2, default=_jsonable))
        return path, side


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[4], dtype=dtype, count=w * h).reshape(h, w)


def _deposit(image: np.ndarray, px: np.ndarray, sigma_px: float, chunk: int = 20000):
    """Add a unit-flux Gaussian (sampled at pixel centres) at each pixel position."""
    h, w = image.shape
    r = int(np.ceil(6 * sigma_px))
    offs = np.arange(-r, r + 1)
    norm = 1.0 / (2 * np.pi * sigma_px**2)
    for s in range(0, len(px), chunk):
        p = px[s:s + chunk]
        c0 = np.round(p).astype(int)
        cols = c0[:, 0, None] + offs
        rows = c0[:, 1, None] + offs
        gx = np.exp(-0.5 * ((cols - p[:, 0, None]) / sigma_px) ** 2)
        gy = np.exp(-0.5 * ((rows - p[:, 1, None]) / sigma_px) ** 2)
        vals = norm * gy[:, :, None] * gx[:, None, :]
        rr = np.broadcast_to(rows[:, :, None], vals.shape)
        cc = np.broadcast_to(cols[:, None, :], vals.shape)
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        np.add.at(image, (rr[ok], cc[ok]), vals[ok])


def render(source, camera: CameraModel, stride: int = 1, length_scale: float = 1.0,
           bright: np.ndarray | None = None) -> IntegrationImage:
    """Accumulate PSF spots of bright ions over all (strided) samples.

    ``source`` is a Configuration, a Trajectory, or an array of positions
    (T, N, 3).  Positions are multiplied by ``length_scale`` before the
    projection (e.g. the unit-system length to render in metres).
    """
    if isinstance(source, Configuration):
        pos = source.positions[None]
        mask = source.bright if bright is None else bright
    elif hasattr(source, "positions") and hasattr(source, "template"):
        pos = source.positions[::stride]
        mask = source.template.bright if bright is None else bright
    else:
        pos = np.asarray(source, dtype=float)[::stride]
        mask = np.ones(pos.shape[1], bool) if bright is None else bright
    if len(pos) == 0:
        raise ValueError("nothing to render")
    pts = pos[:, np.asarray(mask, bool)] * length_scale
    img = IntegrationImage(np.zeros(camera.shape), camera,
                           {"samples": len(pos), "bright_ions": int(np.sum(mask))})
    px = img.to_pixels(project(pts.reshape(-1, 3), camera))
    _deposit(img.data, px, camera.sigma / camera.pixel_size)
    return img


@dataclass(frozen=True)
class Spot:
    centroid: np.ndarray        # image-plane coordinates
    width: np.ndarray           # RMS widths along (u, v), length units
    flux: float
    overlapping: bool = False


def spot_metrics(image: IntegrationImage, centers: np.ndarray | None = None,
                 window: float | None = None, threshold: float = 0.05) -> list[Spot]:
    """Centroids and second-moment widths of the spots.

    With ``centers`` (image-plane coordinates) moments are taken inside a
    window of half-width ``window`` around each centre (default: half the
    smallest centre separation, capped at 8 PSF widths).  Without centres,
    spots are the connected components above ``threshold`` times the peak.
    """
    data = image.data
    h, w = data.shape
    rows, cols = np.mgrid[0:h, 0:w]
    spots = []
    if centers is not None:
        cpx = image.to_pixels(np.asarray(centers, dtype=float))
        sig = image.camera.sigma / image.camera.pixel_size
        if window is None:
            d = np.linalg.norm(cpx[:, None] - cpx[None], axis=-1)
            np.fill_diagonal(d, np.inf)
            half = min(0.5 * d.min(), 8 * sig) if len(cpx) > 1 else 8 * sig
        else:
            half = window / image.camera.pixel_size
        for c in cpx:
            sel = (np.abs(cols - c[0]) <= half) & (np.abs(rows - c[1]) <= half)
            spots.append(_moments(image, data * sel, rows, cols, half < 3 * sig))
        return spots
    lab, n = ndimage.label(data > threshold * data.max())
    for k in range(1, n + 1):
        spots.append(_moments(image, data * (lab == k), rows, cols, False))
    spots.sort(key=lambda s: (s.centroid[0], s.centroid[1]))
    return spots


def _moments(image, d, rows, cols, overlapping) -> Spot:
    f = d.sum()
    if f <= 0:
        return Spot(np.full(2, np.nan), np.full(2, np.nan), 0.0, True)
    cu = (d * cols).sum() / f
    cv = (d * rows).sum() / f
    su = np.sqrt((d * (cols - cu) ** 2).sum() / f)
    sv = np.sqrt((d * (rows - cv) ** 2).sum() / f)
    ps = image.camera.pixel_size
    return Spot(image.to_plane(np.array([cu, cv])), np.array([su, sv]) * ps, float(f),
                overlapping)
