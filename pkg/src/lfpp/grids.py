"""Grid geometry for field synthesis and grid metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

KERNEL_MASS_TOL = 1e-6


def required_padding(t_max: float, tol: float = KERNEL_MASS_TOL) -> float:
    """Padding (length units) so the heaviest kernel's neglected mass is < tol.

    The smoothing kernel at time t has tail mass exp(-R^2 / t) beyond radius R.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must be in (0, 1)")
    return math.sqrt(t_max * math.log(1.0 / tol))


@dataclass(frozen=True)
class GridSpec:
    """Uniform node lattice over a rectangle, plus synthesis padding.

    m: nodes per unit length (spacing h = 1/m).
    x0, y0, width, height: the domain rectangle; node (ix, iy) sits at
        (x0 + ix/m, y0 + iy/m), ix = 0..width*m, iy = 0..height*m.
    padding: length budget around the domain for the heaviest smoothing
        kernel; per-band padding during synthesis shrinks with the kernel.
    """

    m: int
    x0: float = 0.0
    y0: float = 0.0
    width: float = 1.0
    height: float = 1.0
    padding: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("domain must have positive size")
        nx, ny = self.width * self.m, self.height * self.m
        if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
            raise ValueError("domain size must be a whole number of grid cells")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def nx(self) -> int:
        return int(round(self.width * self.m))

    @property
    def ny(self) -> int:
        return int(round(self.height * self.m))

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) of the node array, indexed [iy, ix]."""
        return (self.ny + 1, self.nx + 1)

    def check_scale(self, scale_hi: float, oversample: int = 4) -> None:
        """Resolution must oversample the finest kernel scale 2^-scale_hi."""
        need = oversample * 2.0 ** math.ceil(scale_hi)
        if self.m < need - 1e-9:
            raise ValueError(
                f"m={self.m} under-resolves scale {scale_hi}: need m >= {need:g} "
                f"(oversample {oversample})"
            )

    def check_padding(self, t_max: float, tol: float = KERNEL_MASS_TOL) -> None:
        need = required_padding(t_max, tol)
        if self.padding < need - 1e-12:
            raise ValueError(
                f"padding {self.padding:g} < {need:.6g} required for kernel time {t_max:g}"
            )

    @classmethod
    def for_scales(
        cls,
        scale_hi: float,
        scale_lo: float = 0.0,
        x0: float = 0.0,
        y0: float = 0.0,
        width: float = 1.0,
        height: float = 1.0,
        oversample: int = 4,
        tol: float = KERNEL_MASS_TOL,
    ) -> "GridSpec":
        """Smallest compliant grid for fields over scales [scale_lo, scale_hi]."""
        if scale_hi <= scale_lo:
            raise ValueError("need scale_hi > scale_lo")
        m = int(oversample * 2 ** math.ceil(scale_hi))
        pad = required_padding(4.0 ** -scale_lo, tol)
        return cls(m=m, x0=x0, y0=y0, width=width, height=height, padding=pad)

    def node_xy(self, ix, iy):
        return (self.x0 + ix * self.h, self.y0 + iy * self.h)
