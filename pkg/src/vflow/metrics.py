"""Relative field errors used to score inversions."""
from __future__ import annotations

import numpy as np

from . import randfield as rf
from .errors import ConfigError, ShapeError


def inversion_error(mu_post, xi_ref, basis_ref: rf.KlBasis) -> float:
    """Relative L2 distance between the field of ``mu_post`` and the reference field.

    ``basis_ref`` must hold at least as many modes as ``xi_ref``; ``mu_post`` uses
    its leading modes.
    """
    mu_post = np.asarray(mu_post, dtype=np.float64)
    xi_ref = np.asarray(xi_ref, dtype=np.float64)
    if mu_post.size > xi_ref.size or xi_ref.size > basis_ref.d:
        raise ShapeError("need len(mu_post) <= len(xi_ref) <= reference modes")
    geometry = basis_ref.spec.geometry
    m_ref = rf.synthesize(basis_ref.truncate(xi_ref.size), xi_ref)
    m_est = rf.synthesize(basis_ref.truncate(mu_post.size), mu_post)
    den = rf.l2_norm(m_ref, geometry)
    if den == 0.0:
        raise ConfigError("reference field has zero norm")
    return rf.l2_norm(m_est - m_ref, geometry) / den


def coefficient_inversion_error(mu_post, xi_ref, eigenvalues) -> float:
    """Same ratio computed from KL coefficients; exact for a zero-mean field."""
    lam = np.asarray(eigenvalues, dtype=np.float64)[:len(xi_ref)]
    diff = np.asarray(xi_ref, dtype=np.float64).copy()
    diff[:len(mu_post)] -= mu_post
    return float(np.sqrt(np.sum(lam * diff**2) / np.sum(lam * np.square(xi_ref))))
