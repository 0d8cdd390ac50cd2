"""Diagonal diffusion tensors: oscillatory, piecewise-constant random, constant."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "CoefficientField",
    "oscillatory",
    "constant",
    "gen_block_random",
    "eval_oscillatory",
    "oscillatory_c",
    "field_bounds",
    "splitmix64",
    "save_field",
    "load_field",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

BOUNDS_LATTICE = 1024


def splitmix64(seed: int, count: int) -> np.ndarray:
    """``count`` outputs of the splitmix64 generator started at ``seed``.

    Counter-based: output k only depends on ``seed + (k+1) * golden``.
    """
    k = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _unit_uniform(seed: int, count: int) -> np.ndarray:
    # top 53 bits -> [0, 1)
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def oscillatory_c(x1, x2, eps: float):
    """Scalar diffusion ``c(x)`` of the oscillatory example (vectorized)."""
    s1 = np.sin(2 * np.pi * np.asarray(x1) / eps)
    t2 = 2 * np.pi * np.asarray(x2) / eps
    return (2 + 1.8 * s1) / (2 + 1.8 * np.cos(t2)) + (2 + np.sin(t2)) / (2 + 1.8 * s1)


def eval_oscillatory(x, eps: float) -> np.ndarray:
    """2x2 tensor ``c(x) I`` at a single point."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    c = float(oscillatory_c(x[0], x[1], eps))
    return np.diag([c, c])


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Diagonal tensor field ``diag(a11, a22)`` on the unit square.

    ``scale`` multiplies every entry; it carries the rescaling ``a -> tau a``.
    """

    kind: str
    epsilon: float | None = None
    value: float | None = None
    seed: int | None = None
    blocks_per_side: int | None = None
    lo: float | None = None
    hi: float | None = None
    a11: np.ndarray | None = None
    a22: np.ndarray | None = None
    scale: float = 1.0

    def evaluate(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal entries at the points ``(x, y)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "oscillatory":
            c = self.scale * oscillatory_c(x, y, self.epsilon)
            return c, c
        if self.kind == "constant":
            c = np.full(np.broadcast(x, y).shape, self.scale * self.value)
            return c, c.copy()
        if self.kind == "block_random":
            B = self.blocks_per_side
            bx = np.clip(np.floor(x * B).astype(np.int64), 0, B - 1)
            by = np.clip(np.floor(y * B).astype(np.int64), 0, B - 1)
            b = by * B + bx
            return self.scale * self.a11[b], self.scale * self.a22[b]
        raise ValueError(f"unknown field kind {self.kind!r}")

    def scaled(self, tau: float) -> "CoefficientField":
        if tau <= 0:
            raise ValueError("tau must be positive")
        return replace(self, scale=self.scale * tau)

    def describe(self) -> str:
        if self.kind == "oscillatory":
            return f"oscillatory(eps={self.epsilon})"
        if self.kind == "constant":
            return f"constant({self.value * self.scale})"
        return f"block_random(seed={self.seed}, blocks={self.blocks_per_side})"


def oscillatory(eps: float) -> CoefficientField:
    if eps <= 0:
        raise ValueError("eps must be positive")
    return CoefficientField("oscillatory", epsilon=float(eps))


def constant(value: float) -> CoefficientField:
    if value <= 0:
        raise ValueError("constant coefficient must be positive")
    return CoefficientField("constant", value=float(value))


def gen_block_random(seed: int, blocks_per_side: int, lo: float, hi: float) -> CoefficientField:
    """Piecewise-constant random field, log-uniform on ``[lo, hi]`` per block.

    ``a11`` uses generator outputs ``0 .. B^2-1`` and ``a22`` the next ``B^2``;
    blocks are numbered ``by * B + bx``.
    """
    if lo <= 0:
        raise ValueError("lo must be positive")
    if hi < lo:
        raise ValueError("need lo <= hi")
    if blocks_per_side < 1:
        raise ValueError("blocks_per_side must be >= 1")
    nb = blocks_per_side**2
    u = _unit_uniform(seed, 2 * nb)
    vals = lo * (hi / lo) ** u
    vals = np.clip(vals, lo, hi)
    return CoefficientField(
        "block_random",
        seed=int(seed),
        blocks_per_side=int(blocks_per_side),
        lo=float(lo),
        hi=float(hi),
        a11=vals[:nb].copy(),
        a22=vals[nb:].copy(),
    )


def field_bounds(field: CoefficientField, points=None) -> tuple[float, float]:
    """Lower/upper bounds (alpha, beta) of the diagonal entries.

    Exact for piecewise-constant and constant fields.  The oscillatory field
    is sampled on a fixed 1024^2 lattice of [0, 1]^2, plus ``points`` (an
    ``(k, 2)`` array, e.g. assembly quadrature points) when given.
    """
    if field.kind == "constant":
        v = field.scale * field.value
        return v, v
    if field.kind == "block_random":
        vals = np.concatenate([field.a11, field.a22]) * field.scale
        return float(vals.min()), float(vals.max())
    t = np.linspace(0.0, 1.0, BOUNDS_LATTICE)
    x, y = np.meshgrid(t, t)
    c, _ = field.evaluate(x.ravel(), y.ravel())
    lo, hi = c.min(), c.max()
    if points is not None:
        p = np.asarray(points)
        cp, _ = field.evaluate(p[:, 0], p[:, 1])
        lo, hi = min(lo, cp.min()), max(hi, cp.max())
    return float(lo), float(hi)


def save_field(field: CoefficientField, path) -> None:
    """Write a piecewise-constant field as columns ``block_index A11 A22``."""
    if field.kind == "constant":
        field = CoefficientField(
            "block_random", seed=0, blocks_per_side=1, lo=field.value, hi=field.value,
            a11=np.array([field.value]), a22=np.array([field.value]), scale=field.scale,
        )
    if field.kind != "block_random":
        raise ValueError("only piecewise-constant fields can be archived")
    a11 = field.a11 * field.scale
    a22 = field.a22 * field.scale
    with open(Path(path), "w") as fh:
        fh.write(
            f"# kind=block_random blocks_per_side={field.blocks_per_side} "
            f"seed={field.seed} lo={field.lo!r} hi={field.hi!r}\n"
        )
        fh.write("block_index A11 A22\n")
        for b in range(a11.size):
            fh.write(f"{b} {float(a11[b])!r} {float(a22[b])!r}\n")


def load_field(path) -> CoefficientField:
    meta = {}
    rows = []
    with open(Path(path)) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            if line.startswith("block_index"):
                continue
            b, a, c = line.split()
            rows.append((int(b), float(a), float(c)))
    rows.sort()
    B = int(meta.get("blocks_per_side", round(len(rows) ** 0.5)))
    if B * B != len(rows):
        raise ValueError(f"{path}: expected {B * B} blocks, found {len(rows)}")
    arr = np.array(rows)
    return CoefficientField(
        "block_random",
        seed=int(meta["seed"]) if "seed" in meta else None,
        blocks_per_side=B,
        lo=float(meta["lo"]) if "lo" in meta else float(arr[:, 1:].min()),
        hi=float(meta["hi"]) if "hi" in meta else float(arr[:, 1:].max()),
        a11=arr[:, 1].copy(),
        a22=arr[:, 2].copy(),
    )
