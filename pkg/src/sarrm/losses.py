"""Single entry point for every scalar loss the package differentiates.

``loss_and_grad(net, params, kind, **data)`` returns ``(value, grad)`` with
``grad`` shaped like ``params``.  Kinds:

``lagrangian``  sum over episodes of ``U(xbar) + mu^T (xbar - f_min)``;
                needs ``mu`` ((m,) or (B, m)), ``gains`` ((T,m,m) or (B,T,m,m)),
                ``f_min`` and ``noise``.
``utility``     the same with all duals zero (``mu`` is ignored).
``regression``  mean squared error of a regressor; needs ``gains`` (B, m, m)
                and ``targets`` (B, m).
``quadratic``   ``0.5 * ||params||^2``; a test hook whose gradient is ``params``.
``constant``    ``value`` (default 0) with zero gradient; a test hook.
"""

from __future__ import annotations

import numpy as np

from sarrm.errors import ConfigError
from sarrm.gnn import GraphNet
from sarrm.lagrangian import episode_objective
from sarrm.trainer import regression_loss_and_grad

KINDS = ("lagrangian", "utility", "regression", "quadratic", "constant")


def loss_and_grad(net: GraphNet, params, kind: str, **data) -> tuple[float, np.ndarray]:
    params = np.asarray(params, dtype=np.float64)
    if kind == "constant":
        return float(data.get("value", 0.0)), np.zeros_like(params)
    if kind == "quadratic":
        return 0.5 * float(params @ params), params.copy()
    if kind == "regression":
        return regression_loss_and_grad(net, params, data["gains"], data["targets"])
    if kind in ("lagrangian", "utility"):
        gains = np.asarray(data["gains"], dtype=np.float64)
        if gains.ndim == 3:
            gains = gains[None]
        m = gains.shape[-1]
        mu = np.zeros((gains.shape[0], m)) if kind == "utility" else \
            np.broadcast_to(np.asarray(data["mu"], dtype=np.float64), (gains.shape[0], m))
        res = episode_objective(net, params, mu, gains, data.get("f_min", 0.0), data["noise"])
        return float(res.lagrangian.sum()), res.grad
    raise ConfigError(f"unknown loss {kind!r}; expected one of {KINDS}", field="loss")
