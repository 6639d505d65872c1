"""Density-to-surface-resistivity interpolation and the material matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import MaterialElements

Z_AIR = 1e5  # ohm, surface resistivity standing in for vacuum
Z_MET = 0.01  # ohm, surface resistivity standing in for PEC


@dataclass(frozen=True)
class MaterialModel:
    z_air: float = Z_AIR
    z_met: float = Z_MET

    def __post_init__(self):
        if not (self.z_air > self.z_met > 0):
            raise ValueError(f"need z_air > z_met > 0, got {self.z_air}, {self.z_met}")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.z_met / self.z_air))


def _check(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0) or np.any(rho > 1):
        raise ValueError("densities must lie in [0, 1]")
    return rho


def interpolate_resistivity(model: MaterialModel, rho):
    """``Rs = z_air (z_met / z_air) ** (rho / (2 - rho))``."""
    rho = _check(rho)
    rs = model.z_air * np.exp(model.log_ratio * rho / (2.0 - rho))
    # pin the endpoints against exp/log round-off
    rs = np.where(rho == 0.0, model.z_air, np.where(rho == 1.0, model.z_met, rs))
    return rs if rs.ndim else float(rs)


def resistivity_derivative(model: MaterialModel, rho):
    rho = _check(rho)
    return interpolate_resistivity(model, rho) * model.log_ratio * 2.0 / (2.0 - rho) ** 2


def assemble_material_matrix(rho_phys, elements: MaterialElements,
                             model: MaterialModel = MaterialModel()) -> np.ndarray:
    """``R_rho = sum_t Rs(rho_t) B_t``."""
    rho_phys = np.asarray(rho_phys, dtype=float)
    if rho_phys.shape != (len(elements.blocks),):
        raise ValueError(f"density has shape {rho_phys.shape}, expected ({len(elements.blocks)},)")
    return elements.gram(interpolate_resistivity(model, rho_phys))


def material_matrix_derivative(rho_phys, elements: MaterialElements, t: int,
                               model: MaterialModel = MaterialModel(), design_mask=None):
    """Local block of ``dR_rho/drho_t``.

    Returns ``(index, block)``: the (<=3) global basis indices touching ``t``
    and the matching symmetric block ``Rs'(rho_t) B_t``.
    """
    if design_mask is not None and not design_mask[t]:
        raise ValueError(f"triangle {t} is not a design triangle")
    idx = elements.index[t]
    ok = idx >= 0
    block = resistivity_derivative(model, rho_phys[t]) * elements.blocks[t][np.ix_(ok, ok)]
    return idx[ok], block


def material_derivative_blocks(rho_phys, elements: MaterialElements,
                               model: MaterialModel = MaterialModel()) -> np.ndarray:
    """All ``Rs'(rho_t) B_t`` at once, shape (T, 3, 3), zero on absent slots."""
    d = resistivity_derivative(model, np.asarray(rho_phys, float))
    return elements.blocks * d[:, None, None]
