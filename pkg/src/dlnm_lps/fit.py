"""One-call model fitting on a panel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .laplace import FitResult, Hyperparams, LaplaceProblem
from .model import ModelComponents, ModelSpec, build_model
from .panel import TimeSeriesPanel


@dataclass
class FittedModel:
    panel: TimeSeriesPanel
    spec: ModelSpec
    components: ModelComponents
    result: FitResult

    @property
    def cb(self):
        return self.components.cb

    @property
    def modifier_spec(self):
        ib = self.components.ib
        return None if ib is None else ib.modifier_spec

    @property
    def layout(self):
        return self.components.layout

    def fitted_mean(self):
        """Posterior-mode mean counts on the retained rows, shape (J, T - L)."""
        d = self.components.design
        eta = d @ self.result.xi_mode + d.offset.reshape(-1)
        mu = eta if self.spec.family.value == "gaussian" else np.exp(eta)
        return mu.reshape(d.offset.shape)


def fit_dlnm(panel: TimeSeriesPanel, spec: ModelSpec, initial: Hyperparams | None = None,
             maxfun=200, method="analytic") -> FittedModel:
    """Build the model for ``panel`` and locate the hyperparameter posterior mode."""
    comps = build_model(panel, spec)
    problem = LaplaceProblem(comps.design, comps.prior, spec.family,
                             observed=spec.observed_information)
    result = problem.optimize(initial, maxfun=maxfun, method=method)
    return FittedModel(panel, spec, comps, result)
