"""
Fit a two-view model to the cosine-similarity surface and score the learned
inner-product grid ``G_K(s, t) = <f1(s e1), f2(t e2)>`` against ``G*``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import mlp_specs
from .synthetic import SimGridSpec, gen_sim_data, gen_sim_grid
from .training import TrainConfig, TrainReport, train


@dataclass
class SimFitResult:
    axis: np.ndarray
    learned: np.ndarray
    target: np.ndarray
    report: TrainReport

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean(np.abs(self.learned - self.target)))

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.learned - self.target)))


def simfit_config(**overrides) -> TrainConfig:
    """Full-batch Adam with alpha held at 1, the scale of the generated weights."""
    base = dict(
        full_batch=True,
        optimizer="adam",
        lr=1e-3,
        lr_decay=0.3,
        lr_decay_period=500,
        iterations=1500,
        alpha_update_period=0,
        clamp=40.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def simfit(
    spec: SimGridSpec,
    K: int,
    T: int,
    n: int,
    config: TrainConfig | None = None,
    seed: int = 0,
) -> SimFitResult:
    config = simfit_config(seed=seed) if config is None else config
    ds = gen_sim_data(spec, n, seed)
    specs = [mlp_specs(len(spec.e1), [T], K, "relu", "identity"), mlp_specs(len(spec.e2), [T], K, "relu", "identity")]
    report = train(ds, specs, config)
    s, target = gen_sim_grid(spec)
    enc = report.state.encoders
    A = enc.forward(1, s[:, None] * spec.e1[None, :])
    B = enc.forward(2, s[:, None] * spec.e2[None, :])
    return SimFitResult(s, A @ B.T, target, report)


def write_grid(path, axis: np.ndarray, learned: np.ndarray, target: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("s,t,learned,target,abs_error\n")
        for a, s in enumerate(axis):
            for b, t in enumerate(axis):
                g, h = learned[a, b], target[a, b]
                fh.write(f"{s!r},{t!r},{g!r},{h!r},{abs(g - h)!r}\n")
