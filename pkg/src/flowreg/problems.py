"""Registration problems: synthetic construction, raster ingestion and field output.

Rasters are read and written as 8/16-bit portable graymaps through Pillow.
Exact float output goes to a sidecar file: a 16-byte header (8-byte magic,
two little-endian uint32 grid sizes) followed by little-endian float64 values
in row-major order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .spectral import Grid2, gaussian_smooth, leray_project
from .transport import TimeGrid, solve_state

__all__ = [
    "IoError",
    "FormatError",
    "RegistrationProblem",
    "default_sigma",
    "sinusoidal_pattern",
    "sinusoidal_velocity",
    "divergence_free_velocity",
    "synth_sinusoidal",
    "synth_from_seed",
    "normalize",
    "ingest_image",
    "preprocess",
    "emit_field",
    "write_sidecar",
    "read_sidecar",
]

SIDECAR_MAGIC = b"FLOWREG1"

PathLike = Union[str, Path]


class IoError(OSError):
    """A file could not be read or written."""


class FormatError(ValueError):
    """A file exists but its content is not a supported raster or sidecar."""


@dataclass
class RegistrationProblem:
    """Template ``m_T`` (transported) and reference ``m_R`` on a common grid."""

    m_template: np.ndarray
    m_reference: np.ndarray
    grid: Grid2
    sigma: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m_template.shape != self.grid.n or self.m_reference.shape != self.grid.n:
            raise ValueError("both images must live on the problem grid")

    @property
    def identical(self) -> bool:
        return bool(np.array_equal(self.m_template, self.m_reference))


def default_sigma(grid: Grid2) -> float:
    return 2 * np.pi / min(grid.n)


def sinusoidal_pattern(grid: Grid2, freq: int = 3) -> np.ndarray:
    """Smooth band-limited reference pattern with range [0, 1]."""
    x1, x2 = grid.coords
    return 0.5 + 0.5 * np.sin(freq * x1) * np.sin(freq * x2)


def sinusoidal_velocity(grid: Grid2, amplitude: float = 0.25) -> np.ndarray:
    """Stationary field ``v^i = amplitude * sin(2 x^i)``, shape (1, 2, n1, n2)."""
    x1, x2 = grid.coords
    return np.stack([amplitude * np.sin(2 * x1), amplitude * np.sin(2 * x2)])[None]


def divergence_free_velocity(grid: Grid2, amplitude: float = 0.25) -> np.ndarray:
    """Stationary Taylor-Green vortex field, shape (1, 2, n1, n2). It is exactly divergence free."""
    x1, x2 = grid.coords
    v = np.stack([amplitude * np.sin(x1) * np.cos(x2), -amplitude * np.cos(x1) * np.sin(x2)])
    return leray_project(v, grid)[None]


def synth_from_seed(
    seed: np.ndarray, v_star: np.ndarray, grid: Grid2, tg: TimeGrid, exact: bool = False
) -> RegistrationProblem:
    """Build a problem by transporting ``seed`` under the stationary field ``v_star``.

    By default ``m_R = seed`` and ``m_T`` is the transported seed. With
    ``exact=True`` the roles flip (``m_T = seed``, ``m_R`` transported), so
    ``v_star`` is an exact zero-residual solution.
    """
    vt = np.broadcast_to(v_star[0], (tg.n_t + 1, 2, *grid.n))
    warped = solve_state(seed, vt, grid, tg).final
    m_t, m_r = (seed, warped) if exact else (warped, seed)
    return RegistrationProblem(m_t, m_r, grid, provenance={"kind": "synthetic", "exact": exact})


def synth_sinusoidal(
    grid: Grid2, tg: TimeGrid, stokes: bool = False, exact: bool = False, freq: int = 3
) -> tuple[RegistrationProblem, np.ndarray]:
    """Sinusoidal test problem and its generating stationary velocity.

    The Stokes variant uses a divergence-free generating field, because the
    compressible ``sin(2 x^i)`` field is a pure gradient and projects to zero.
    """
    v_star = divergence_free_velocity(grid) if stokes else sinusoidal_velocity(grid)
    prob = synth_from_seed(sinusoidal_pattern(grid, freq), v_star, grid, tg, exact=exact)
    prob.provenance["stokes"] = stokes
    return prob, v_star


def normalize(a: np.ndarray, maxval: Optional[float] = None) -> np.ndarray:
    """Affine map to [0, 1]; a constant image is divided by ``maxval`` (or left at 1 if nonzero)."""
    a = np.asarray(a, dtype=float)
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        return (a - lo) / (hi - lo)
    if maxval:
        return np.clip(a / maxval, 0.0, 1.0)
    return np.ones_like(a) if hi > 0 else np.zeros_like(a)


def _read_raster(path: PathLike) -> tuple[np.ndarray, float]:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"cannot read {path}: no such file")
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                a = np.asarray(im, dtype=float)
                maxval = 65535.0
            elif im.mode in ("L", "P", "RGB", "RGBA", "LA"):
                a = np.asarray(im.convert("L"), dtype=float)
                maxval = 255.0
            else:
                raise FormatError(f"unsupported image mode {im.mode} in {path}")
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path} is not a readable raster") from exc
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return a, maxval


def _resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if a.shape == shape:
        return a
    im = Image.fromarray(a.astype(np.float32))
    # Pillow sizes are (width, height) = (n2, n1)
    return np.asarray(im.resize((shape[1], shape[0]), Image.BILINEAR), dtype=float)


def preprocess(
    a: np.ndarray, grid: Grid2, sigma: Optional[float] = None, margin: Optional[int] = None, smooth: bool = True
) -> np.ndarray:
    """Shrink into the grid leaving a zero margin per side, then smooth periodically.

    ``margin`` defaults to ``n / 16`` per axis; ``sigma`` defaults to
    ``2 pi / min(n)``. ``a`` must already be normalized and sampled on ``grid``.
    """
    n1, n2 = grid.n
    p1, p2 = (n1 // 16, n2 // 16) if margin is None else (margin, margin)
    if p1 or p2:
        inner = _resize(a, (n1 - 2 * p1, n2 - 2 * p2))
        out = np.zeros(grid.n)
        out[p1 : n1 - p1, p2 : n2 - p2] = inner
    else:
        out = np.array(a, dtype=float)
    if smooth:
        out = gaussian_smooth(out, default_sigma(grid) if sigma is None else sigma, grid)
    return out


def ingest_image(
    path: PathLike,
    grid: Grid2,
    sigma: Optional[float] = None,
    margin: Optional[int] = None,
    sharp: bool = False,
    smooth: bool = True,
) -> np.ndarray:
    """Read a grayscale raster as a periodic scalar field on ``grid``.

    Steps: bilinear resampling, normalization to [0, 1], zero margin, Gaussian
    smoothing. ``sharp=True`` doubles the smoothing width. A ``.f64`` sidecar
    is loaded verbatim (no resampling or smoothing).
    """
    path = Path(path)
    if path.suffix == ".f64":
        a = read_sidecar(path)
        if a.shape != grid.n:
            raise FormatError(f"{path} holds a {a.shape} field, grid is {grid.n}")
        return a
    raw, maxval = _read_raster(path)
    a = normalize(_resize(raw, grid.n), maxval)
    s = default_sigma(grid) if sigma is None else sigma
    if sharp:
        s *= 2
    return preprocess(a, grid, s, margin, smooth)


def write_sidecar(a: np.ndarray, path: PathLike) -> None:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim != 2:
        raise ValueError("sidecars hold 2D fields")
    try:
        with open(path, "wb") as fh:
            fh.write(SIDECAR_MAGIC + struct.pack("<II", *a.shape))
            fh.write(a.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_sidecar(path: PathLike) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(data) < 16 or data[:8] != SIDECAR_MAGIC:
        raise FormatError(f"{path} is not a float sidecar")
    n1, n2 = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 8 * n1 * n2:
        raise FormatError(f"{path} is truncated")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(n1, n2).copy()


def emit_field(
    a: np.ndarray,
    path: PathLike,
    clamp: Optional[tuple[float, float]] = None,
    bits: int = 8,
    sidecar: bool = True,
) -> None:
    """Write ``a`` as a graymap, linearly mapping ``clamp`` (or [min, max]) to the pixel range.

    With ``sidecar=True`` an exact ``.f64`` copy is written next to the image.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    a = np.asarray(a, dtype=float)
    lo, hi = clamp if clamp is not None else (float(a.min()), float(a.max()))
    maxval = 255 if bits == 8 else 65535
    if hi > lo:
        scaled = (np.clip(a, lo, hi) - lo) / (hi - lo)
    else:
        scaled = np.full_like(a, 1.0 if hi > 0 else 0.0)
    pix = np.rint(scaled * maxval)
    path = Path(path)
    try:
        if bits == 8:
            Image.fromarray(pix.astype(np.uint8)).save(path, format="PPM")
        else:
            Image.fromarray(pix.astype(np.uint16)).save(path, format="PPM")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if sidecar:
        write_sidecar(a, path.with_suffix(".f64"))
