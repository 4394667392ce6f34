"""Six noise families at nine intensity levels on images in [0, 1].

Images are [h, w, channels] arrays. Level 9 of each family is pinned to the
severity-4 constants of the public corruption benchmark; level 1 sits at
roughly one tenth of that magnitude. Scale-like parameters interpolate
geometrically across the nine levels, kernel radii linearly. Salt-pepper and
impulse pick their coordinates from the PRNG before reading any pixel value,
so the modified set depends only on (seed, level, shape).
"""

from dataclasses import dataclass

import numpy as np

from .tensor_core import make_rng

KINDS = ("blur", "frost", "gaussian", "impulse", "poisson_shot", "salt_pepper")

LEVELS = range(1, 10)


class UnknownKind(ValueError):
    pass


class LevelOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    level: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownKind(f"unknown noise kind {self.kind!r}")
        if not 1 <= self.level <= 9:
            raise LevelOutOfRange(f"level must be 1-9, got {self.level}")


def _geom(lo: float, hi: float) -> np.ndarray:
    v = np.geomspace(lo, hi, 9)
    v[0], v[-1] = lo, hi
    return v

def _lin(lo: float, hi: float) -> np.ndarray:
    v = np.linspace(lo, hi, 9)
    v[0], v[-1] = lo, hi
    return v


# Severity-4 anchors at index 8: sigma 0.26 (gaussian), lambda 5 (poisson),
# sigma 4 / radius 12 (blur), mix (0.65, 0.7) (frost), fraction 0.17 (impulse).
# Salt-pepper has no benchmark entry; density 0.005 -> 0.17 mirrors impulse.
_GAUSS_SIGMA = _geom(0.026, 0.26)
_POISSON_LAMBDA = _geom(200.0, 5.0)
_BLUR_SIGMA = _geom(0.4, 4.0)
_BLUR_RADIUS = np.floor(_lin(2.0, 12.0) + 0.5).astype(int)
_FROST_OPACITY = _geom(0.07, 0.7)
_FROST_KEEP = _lin(0.965, 0.65)
_SP_DENSITY = _geom(0.005, 0.17)
_IMPULSE_FRACTION = _geom(0.017, 0.17)


def intensity_params(kind: str, level: int) -> dict:
    """Numeric corruption parameters for one (kind, level) cell."""
    if kind not in KINDS:
        raise UnknownKind(f"unknown noise kind {kind!r}")
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= 9:
        raise LevelOutOfRange(f"level must be 1-9, got {level}")
    i = level - 1
    if kind == "gaussian":
        return {"sigma": float(_GAUSS_SIGMA[i])}
    if kind == "poisson_shot":
        return {"lam": float(_POISSON_LAMBDA[i])}
    if kind == "blur":
        return {"sigma": float(_BLUR_SIGMA[i]), "radius": int(_BLUR_RADIUS[i])}
    if kind == "frost":
        return {"keep": float(_FROST_KEEP[i]), "opacity": float(_FROST_OPACITY[i])}
    if kind == "salt_pepper":
        return {"density": float(_SP_DENSITY[i])}
    return {"fraction": float(_IMPULSE_FRACTION[i])}


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps over [-radius, radius]; delta as sigma -> 0."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    if sigma <= 0:
        k = (x == 0).astype(np.float64)
    else:
        k = np.exp(-0.5 * (x / sigma) ** 2)
        if k.sum() == 0.0:
            k = (x == 0).astype(np.float64)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Separable Gaussian convolution with reflect padding, all channels."""
    k = gaussian_kernel1d(sigma, radius)
    out = np.asarray(img, dtype=np.float64)
    for axis in (0, 1):
        if out.shape[axis] == 1:
            continue
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for tap in range(2 * radius + 1):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += k[tap] * padded[tuple(sl)]
        out = acc
    return out


def _value_noise(h: int, w: int, rng: np.random.Generator, octaves: int = 3) -> np.ndarray:
    """Fractal value noise in [0, 1]: bilinearly upsampled random grids."""
    acc = np.zeros((h, w))
    amp, total = 1.0, 0.0
    for octave in range(octaves):
        cells = 2 ** (octave + 2)
        grid = rng.random((cells + 1, cells + 1))
        ys = np.arange(h) * cells / h
        xs = np.arange(w) * cells / w
        y0, x0 = ys.astype(int), xs.astype(int)
        fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
        g00 = grid[np.ix_(y0, x0)]
        g01 = grid[np.ix_(y0, x0 + 1)]
        g10 = grid[np.ix_(y0 + 1, x0)]
        g11 = grid[np.ix_(y0 + 1, x0 + 1)]
        up = (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
              + g10 * fy * (1 - fx) + g11 * fy * fx)
        acc += amp * up
        total += amp
        amp *= 0.5
    return acc / total


def frost_texture(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Thresholded fractal value noise: sparse bright crystals in [0, 1]."""
    noise = _value_noise(h, w, rng)
    return np.clip((noise - 0.55) / 0.45, 0.0, 1.0)


def corrupt(img: np.ndarray, spec: NoiseSpec, stream: int = 0) -> np.ndarray:
    """Apply one corruption; deterministic given (img, spec, stream).

    Pass a distinct stream per image when corrupting a set so the draws are
    order-independent.
    """
    x = np.asarray(img, dtype=np.float64)
    params = intensity_params(spec.kind, spec.level)
    rng = make_rng(spec.seed, stream)

    if spec.kind == "gaussian":
        out = x + rng.normal(0.0, params["sigma"], size=x.shape)
    elif spec.kind == "poisson_shot":
        lam = params["lam"]
        out = rng.poisson(x * lam).astype(np.float64) / lam
    elif spec.kind == "blur":
        out = gaussian_blur(x, params["sigma"], params["radius"])
    elif spec.kind == "frost":
        tex = frost_texture(x.shape[0], x.shape[1], rng)
        out = params["keep"] * x + params["opacity"] * tex[..., None]
    elif spec.kind == "salt_pepper":
        mask = rng.random(x.shape) < params["density"]
        salt = rng.random(x.shape) < 0.5
        out = x.copy()
        out[mask & salt] = 1.0
        out[mask & ~salt] = 0.0
    else:  # impulse
        mask = rng.random(x.shape) < params["fraction"]
        repl = rng.random(x.shape)
        out = x.copy()
        out[mask] = repl[mask]

    return np.clip(out, 0.0, 1.0)


def corrupt_batch(images: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Corrupt [n, h, w, c] with stream i for image i."""
    return np.stack([corrupt(images[i], spec, stream=i) for i in range(images.shape[0])])
