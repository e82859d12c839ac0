"""Scikit-learn style front end.

Designers map structures to sequences: ``fit`` trains (where there is
anything to train), ``predict`` returns one design per structure and
``score`` reports the mean Boltzmann probability of those designs.
:class:`FoldEvaluator` turns ``(structure, sequence)`` pairs into metric rows.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import teacher_design
from .decoding import DecodeRequest, best_of_n, sample
from .folding import fold_summary
from .policy import Policy, PolicyConfig, load_checkpoint, save_checkpoint, target_init_sample
from .structure import as_structure
from .thermo import EnergyParams
from .training import TrainConfig, train_rl, train_sl
from .validation import check_design_pairs, check_is_fitted, check_positive_int, \
    check_structures

FEATURES = ("prob", "ned", "is_mfe", "is_umfe", "energy", "mfe")


class _DesignerMixin:
    def _params(self) -> EnergyParams:
        return self.energy_params if self.energy_params is not None else EnergyParams()

    def score(self, Y, X=None) -> float:
        """Mean p(y|x) of the predicted designs (``X`` is ignored)."""
        p = self._params()
        ys = check_structures(Y, p.h_min)
        designs = self.predict(ys)
        return float(np.mean([fold_summary(x, y, p, False).prob for y, x in zip(ys, designs)]))


class LMDesigner(_DesignerMixin, BaseEstimator):
    """Structure-prompted language-model designer.

    ``fit`` runs supervised training on ``(structure, sequence)`` pairs,
    ``fit_rl`` refines with group-relative policy gradients, and ``predict``
    returns the best of ``n_samples`` constrained samples under ``metric``.
    """

    def __init__(self, n_layers=2, n_heads=4, d_model=64, d_ff=256, max_context=1088,
                 lr=1e-3, batch_size=32, steps=600, rl_lr=1e-5, rl_steps=200, group_k=8,
                 n_samples=16, metric="prob", temperature=1.0, seed=0, energy_params=None):
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff
        self.max_context = max_context
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.rl_lr = rl_lr
        self.rl_steps = rl_steps
        self.group_k = group_k
        self.n_samples = n_samples
        self.metric = metric
        self.temperature = temperature
        self.seed = seed
        self.energy_params = energy_params

    def _config(self) -> PolicyConfig:
        return PolicyConfig(self.n_layers, self.n_heads, self.d_model, self.d_ff,
                            self.max_context)

    def fit(self, Y, X):
        ys, xs = check_design_pairs(Y, X, self._params().h_min)
        policy = Policy.initialize(self._config(), seed=self.seed)
        cfg = TrainConfig(lr=self.lr, batch_size=check_positive_int("batch_size", self.batch_size),
                          total_steps=check_positive_int("steps", self.steps), seed=self.seed)
        self.policy_, trace = train_sl(policy, list(zip(ys, xs)), cfg)
        self.loss_trace_ = [v for _, v in trace]
        return self

    def fit_rl(self, Y):
        check_is_fitted(self)
        ys = check_structures(Y, self._params().h_min)
        cfg = TrainConfig(lr=self.rl_lr, group_k=self.group_k,
                          total_steps=check_positive_int("rl_steps", self.rl_steps),
                          seed=self.seed, temperature=self.temperature)
        self.policy_, trace = train_rl(self.policy_, ys, cfg, self._params())
        self.reward_trace_ = [r for _, _, r in trace]
        return self

    def sample(self, y, n: int, constrained: bool = True) -> list[str]:
        check_is_fitted(self)
        req = DecodeRequest(as_structure(y), n, self.temperature, self.seed, constrained)
        return sample(self.policy_, req).sequences

    def predict(self, Y) -> list[str]:
        check_is_fitted(self)
        p = self._params()
        n = check_positive_int("n_samples", self.n_samples)
        return [best_of_n(self.policy_, y, n, self.metric, p, self.seed,
                          temperature=self.temperature).best_sequence
                for y in check_structures(Y, p.h_min)]

    def save(self, path) -> None:
        check_is_fitted(self)
        save_checkpoint(self.policy_, path)

    @classmethod
    def from_checkpoint(cls, path, **params) -> "LMDesigner":
        policy = load_checkpoint(path)
        c = policy.config
        est = cls(n_layers=c.n_layers, n_heads=c.n_heads, d_model=c.d_model, d_ff=c.d_ff,
                  max_context=c.max_context, **params)
        est.policy_ = policy
        return est


class TargetInitDesigner(_DesignerMixin, BaseEstimator):
    """Best of ``n_samples`` draws from the target-initialization distribution."""

    def __init__(self, n_samples=16, metric="prob", seed=0, energy_params=None):
        self.n_samples = n_samples
        self.metric = metric
        self.seed = seed
        self.energy_params = energy_params

    def fit(self, Y=None, X=None):
        return self

    def predict(self, Y) -> list[str]:
        p = self._params()
        n = check_positive_int("n_samples", self.n_samples)
        draw = lambda y, k: target_init_sample(y, [self.seed, k])  # noqa: E731
        return [best_of_n(None, y, n, self.metric, p, self.seed, sampler=draw).best_sequence
                for y in check_structures(Y, p.h_min)]


class LocalSearchDesigner(_DesignerMixin, BaseEstimator):
    """The hill-climbing teacher as a stand-alone designer."""

    def __init__(self, budget=500, seed=0, energy_params=None):
        self.budget = budget
        self.seed = seed
        self.energy_params = energy_params

    def fit(self, Y=None, X=None):
        return self

    def predict(self, Y) -> list[str]:
        p = self._params()
        budget = check_positive_int("budget", self.budget)
        return [teacher_design(y, budget, [self.seed, i], p)
                for i, y in enumerate(check_structures(Y, p.h_min))]


class FoldEvaluator(TransformerMixin, BaseEstimator):
    """``transform`` maps ``(structure, sequence)`` pairs to rows of :data:`FEATURES`."""

    def __init__(self, energy_params=None, with_ned=True):
        self.energy_params = energy_params
        self.with_ned = with_ned

    def fit(self, pairs=None, y=None):
        return self

    def transform(self, pairs) -> np.ndarray:
        p = self.energy_params if self.energy_params is not None else EnergyParams()
        pairs = list(pairs)
        ys, xs = check_design_pairs([a for a, _ in pairs], [b for _, b in pairs], p.h_min)
        rows = []
        for y, x in zip(ys, xs):
            ev = fold_summary(x, y, p, self.with_ned)
            rows.append([ev.prob, np.nan if ev.ned is None else ev.ned, float(ev.is_mfe),
                         float(ev.is_umfe), float(ev.energy), float(ev.summary.mfe_value)])
        return np.array(rows, dtype=float).reshape(len(rows), len(FEATURES))

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURES, dtype=object)
