"""Reverse-mode differentiation through Euler rollouts.

:func:`~graphebm.ebm.euler_rollout` records each step's intermediates on a
:class:`GradientTape`; :meth:`GradientTape.backward` then walks the steps in
reverse, propagating the state adjoint and accumulating parameter
gradients with hand-written vector-Jacobian products.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .ebm import swish_grad
from .exceptions import ContractError
from .models import BetaForm, EBMParams


def rhs_backward(cache: dict[str, Any], g_F: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Pull the adjoint *g_F* of one right-hand side back to X and params."""
    params: EBMParams = cache["params"]
    C = cache["C"]
    weight, out, b = cache["weight"], cache["out"], cache["beta"]

    g_out = g_F[:, None, :] * weight * b
    g_beta = g_F[:, None, :] * weight * out
    g_source = (g_beta * cache["sink"][None, :, None]).sum(axis=1)
    g_sink = (g_beta * cache["source"][:, None, :]).sum(axis=(0, 2))

    grads = {}
    grads["b3"] = g_out.sum(axis=(0, 1))
    grads["w3"] = np.einsum("ijo,ijh->oh", g_out, cache["h2"])
    g_z2 = (g_out @ params.w3) * swish_grad(cache["z2"])
    grads["b2"] = g_z2.sum(axis=(0, 1))
    grads["w2"] = np.einsum("ijo,ijh->oh", g_z2, cache["h1"])
    g_z1 = (g_z2 @ params.w2) * swish_grad(cache["z1"])
    grads["b1"] = g_z1.sum(axis=(0, 1))
    grads["w1"] = np.einsum("ijo,ijh->oh", g_z1, cache["dY"])
    g_dY = g_z1 @ params.w1

    # dY[i, j] = Y[j] - Y[i]
    g_Y = g_dY.sum(axis=0) - g_dY.sum(axis=1)
    grads["q"] = g_Y[:, 4]
    g_R = g_Y[:, :3]
    g_P = g_Y[:, 3]

    if cache["beta_form"] is BetaForm.LITERAL:
        g_X = (g_R + g_P[:, None] + g_source) / C[:, None]
        g_X = g_X - (g_sink / C)[:, None]
    else:
        g_X = (g_R + g_source + (g_P - g_sink)[:, None]) / C[:, None]
    return g_X, grads


class GradientTape:
    """Per-step record of a rollout, differentiable in reverse.

    Parameters
    ----------
    params : EBMParams
        The parameters the rollout was run with; gradients share their
        shape exactly.
    dt : float
        Euler step size.
    """

    def __init__(self, params: EBMParams, dt: float):
        self.params = params
        self.dt = dt
        self._steps: list[dict[str, Any]] = []

    def __len__(self) -> int:
        return len(self._steps)

    def record(self, cache: dict[str, Any]) -> None:
        self._steps.append(cache)

    def backward(self, state_adjoints: np.ndarray) -> tuple[EBMParams, np.ndarray]:
        """Gradient of a loss whose derivative w.r.t. each recorded state is given.

        Parameters
        ----------
        state_adjoints : ndarray, shape (n_steps + 1, n, 3)
            ``dL/dX^(k)`` for every state of the rollout, initial state included.

        Returns
        -------
        (EBMParams, ndarray)
            Parameter gradient and ``dL/dX^(0)``.
        """
        if state_adjoints.shape[0] != len(self._steps) + 1:
            raise ContractError(
                f"{state_adjoints.shape[0]} adjoints for a {len(self._steps)}-step tape"
            )
        grad = EBMParams.zeros(self.params.n_nodes)
        lam = np.array(state_adjoints[-1], dtype=float)
        for k in range(len(self._steps) - 1, -1, -1):
            g_X, grads = rhs_backward(self._steps[k], self.dt * lam)
            for name, value in grads.items():
                setattr(grad, name, getattr(grad, name) + value)
            lam = state_adjoints[k] + lam + g_X
        return grad, lam
