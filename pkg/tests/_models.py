"""Shared test fixtures: models used by several test modules."""

import numpy as np

from levylab.model import ModelSpec, coefficient_xt


def nonlinear_2d(kappa=0.4):
    """Dissipative drift plus a bounded smooth nonlinearity, constant noise."""
    A = np.array([[1.0, 0.5], [-0.3, 1.0]])
    eye = np.eye(2)

    def drift(t, x):
        return -x + kappa * np.tanh(x @ A.T)

    def drift_jac(t, x):
        th = np.tanh(x @ A.T)
        sech2 = 1.0 - th ** 2
        return -eye[None, :, :] + kappa * sech2[:, :, None] * A[None, :, :]

    return ModelSpec(
        theta=1.0, m=2, k=2,
        drift=coefficient_xt(drift),
        diffusion=coefficient_xt(
            lambda t, x: np.broadcast_to(eye, (x.shape[0], 2, 2)).copy()
        ),
        drift_jac=coefficient_xt(drift_jac),
        diffusion_constant=True,
        name="nonlinear2d",
    )
