"""Source-free adaptation of a pre-trained range classifier.

Two methods fine-tune the feature extractor while the classifier stays frozen:

* SHOT: diversity (negative entropy of the mean output) plus JSD to fixed
  pseudo-labels on the confident subset.
* JSEA: every test sample gets a pseudo-label. Confident samples keep their
  own argmax; for the rest, the output peak whose expected received energy
  (estimated from the confident samples) is closest to the measured energy
  is chosen.

Confident set, energy curve and pseudo-labels are computed once from the
pre-adaptation outputs and never re-estimated.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn_core as nn
from .features import ScmFeature, stack_channels
from .labels import LabelConfig, RangeGrid, estimate_range, soften
from .localizer import RangeClassifier

log = logging.getLogger(__name__)


class EmptyConfidentSetError(ValueError):
    """No test sample passed the confidence rule, so there is nothing to adapt from."""


@dataclass
class AdaptConfig:
    mu_da: float = 5e-6
    beta: float = 1.0
    delta: float = 500.0
    sigma_s: float | None = None  # None: per-window spread of confident energies
    peak_dominance: float = 10.0
    num_steps: int = 100
    sigma_label: float = 5.0
    chunk_size: int = 128

    def __post_init__(self):
        for name in ("mu_da", "beta", "delta", "peak_dominance", "sigma_label"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_s is not None and self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")
        if self.num_steps < 0:
            raise ValueError("num_steps must be non-negative")


@dataclass(frozen=True)
class ConfidentSet:
    indices: np.ndarray
    size_total: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        if len(np.unique(idx)) != len(idx) or np.any(idx < 0) or np.any(idx >= self.size_total):
            raise ValueError("confident indices must be unique and within the test set")
        object.__setattr__(self, "indices", np.sort(idx))

    @property
    def complement(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.size_total), self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class TransmissionLossEstimate:
    """Windowed mean energy per range bin; NaN marks bins with no confident support."""

    mean: np.ndarray
    count: np.ndarray
    spread: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.count > 0


# -- peaks and the confident set ------------------------------------------------

def find_peaks(p: np.ndarray) -> list[int]:
    """Strict local maxima, largest first. Plateaus never count as peaks."""
    p = np.asarray(p, dtype=float)
    if p.size == 1:
        return [0]
    left = np.r_[-np.inf, p[:-1]]
    right = np.r_[p[1:], -np.inf]
    idx = np.flatnonzero((p > left) & (p > right))
    return [int(i) for i in idx[np.argsort(-p[idx], kind="stable")]]


def is_confident(p: np.ndarray, dominance: float) -> bool:
    peaks = find_peaks(p)
    if len(peaks) == 1:
        return True
    return len(peaks) > 1 and p[peaks[0]] > dominance * p[peaks[1]]


def select_confident(predictions: np.ndarray, cfg: AdaptConfig = AdaptConfig()) -> ConfidentSet:
    predictions = np.atleast_2d(predictions)
    idx = [i for i, p in enumerate(predictions) if is_confident(p, cfg.peak_dominance)]
    return ConfidentSet(np.array(idx, dtype=int), len(predictions))


# -- energy model -------------------------------------------------------------

def estimate_gamma(conf: ConfidentSet, energies: np.ndarray, ranges_hat: np.ndarray,
                   cfg: AdaptConfig = AdaptConfig(), grid: RangeGrid = RangeGrid()) -> TransmissionLossEstimate:
    """Mean confident-sample energy within ``delta`` of each bin's decoded range."""
    e = np.asarray(energies, dtype=float)[conf.indices]
    d_hat = np.asarray(ranges_hat, dtype=float)[conf.indices]
    centers = grid.bin_ranges
    member = np.abs(centers[:, None] - d_hat[None, :]) <= cfg.delta  # (M, |S|)
    count = member.sum(axis=1)
    mean = np.full(len(centers), np.nan)
    spread = np.full(len(centers), np.nan)
    for k in np.flatnonzero(count):
        vals = e[member[k]]
        mean[k] = vals.mean()
        std = vals.std(ddof=1) if len(vals) > 1 else 0.0
        spread[k] = max(std, 0.1 * mean[k])
    return TransmissionLossEstimate(mean=mean, count=count, spread=spread)


def energy_pseudo_label(pred: np.ndarray, energy: float, gamma: TransmissionLossEstimate,
                        cfg: AdaptConfig = AdaptConfig(), grid: RangeGrid = RangeGrid()) -> np.ndarray:
    """Soft label at the output peak whose expected energy is nearest ``energy``."""
    peaks = [k for k in find_peaks(pred) if gamma.defined[k]]
    if peaks:
        k_star = peaks[int(np.argmin([abs(energy - gamma.mean[k]) for k in peaks]))]
    else:
        k_star = int(np.argmax(pred))
    return soften(k_star, LabelConfig(cfg.sigma_label), grid.num_classes)


def energy_posterior(energy: float, gamma: TransmissionLossEstimate, sigma_s=None,
                     grid: RangeGrid | None = None) -> np.ndarray:
    """p(range bin | energy) under a Gaussian energy likelihood and a uniform prior.

    ``sigma_s`` may be a scalar or per-bin array; by default the per-bin
    spread stored in ``gamma`` is used.
    """
    ok = gamma.defined
    if not ok.any():
        raise ValueError("transmission-loss estimate is undefined in every bin")
    sigma = gamma.spread if sigma_s is None else np.broadcast_to(np.asarray(sigma_s, float), gamma.mean.shape)
    logp = np.full(gamma.mean.shape, -np.inf)
    logp[ok] = -((energy - gamma.mean[ok]) ** 2) / (2 * sigma[ok] ** 2)
    w = np.exp(logp - logp[ok].max())
    return w / w.sum()


def fuse_posteriors(p_scm: np.ndarray, p_energy: np.ndarray) -> np.ndarray:
    prod = np.asarray(p_scm, float) * np.asarray(p_energy, float)
    total = prod.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("posteriors have disjoint support")
    return prod / total


# -- losses -------------------------------------------------------------------

def _accumulate(total: dict, grads: dict) -> None:
    for k, g in grads.items():
        if k in total:
            total[k] += g
        else:
            total[k] = g.copy()


def shot_objective(model: RangeClassifier, x: np.ndarray, pseudo: np.ndarray, conf_idx: np.ndarray,
                   beta: float, chunk: int = 128, backward: bool = True):
    """``-H(mean output) + beta/|S| * sum_{i in S} JSD(pseudo_i, output_i)`` and its gradient.

    ``pseudo`` holds one row per confident index.
    """
    n = len(x)
    n_conf = len(conf_idx)
    probs = np.concatenate([model.forward(x[i:i + chunk]) for i in range(0, n, chunk)])
    y_bar = probs.mean(axis=0)
    target = np.zeros_like(probs)
    in_conf = np.zeros(n, dtype=bool)
    in_conf[conf_idx] = True
    target[conf_idx] = pseudo
    jsd_terms = nn.jsd(target[conf_idx], probs[conf_idx])
    loss = -float(nn.entropy(y_bar)) + beta / max(n_conf, 1) * float(jsd_terms.sum())
    if not backward:
        return loss, {}
    d_div = -nn.entropy_grad(y_bar) / n
    grads: dict[str, np.ndarray] = {}
    for i in range(0, n, chunk):
        sl = slice(i, i + chunk)
        # a single chunk still holds the layer caches of the first pass
        p = probs if n <= chunk else model.forward(x[sl])
        dp = np.broadcast_to(d_div, p.shape).copy()
        m = in_conf[sl]
        dp[m] += beta / n_conf * nn.jsd_grad_q(target[sl][m], p[m])
        model.backward(p, dp)
        _accumulate(grads, model.gradients())
    return loss, grads


def jsea_objective(model: RangeClassifier, x: np.ndarray, pseudo: np.ndarray, chunk: int = 128,
                   backward: bool = True):
    """``sum_i JSD(pseudo_i, output_i)`` over the whole test set, and its gradient."""
    loss = 0.0
    grads: dict[str, np.ndarray] = {}
    for i in range(0, len(x), chunk):
        p = model.forward(x[i:i + chunk])
        t = pseudo[i:i + chunk]
        loss += float(nn.jsd(t, p).sum())
        if backward:
            model.backward(p, nn.jsd_grad_q(t, p))
            _accumulate(grads, model.gradients())
    return loss, grads


# -- adaptation drivers -------------------------------------------------------

@dataclass
class AdaptReport:
    method: str
    confident: ConfidentSet
    loss_trace: list[float] = field(default_factory=list)
    bins_before: np.ndarray | None = None
    bins_after: np.ndarray | None = None
    pseudo_bins: np.ndarray | None = None
    gamma: TransmissionLossEstimate | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record", "index", "loss", "confident_count", "bin_before", "bin_after", "pseudo_bin"])
            for step, loss in enumerate(self.loss_trace):
                w.writerow(["step", step, repr(loss), len(self.confident), "", "", ""])
            conf = set(self.confident.indices.tolist())
            for i, (b0, b1) in enumerate(zip(self.bins_before, self.bins_after)):
                pb = "" if self.pseudo_bins is None or self.pseudo_bins[i] < 0 else int(self.pseudo_bins[i])
                w.writerow(["sample", i, "", int(i in conf), int(b0), int(b1), pb])


def _run_adam(model: RangeClassifier, objective, cfg: AdaptConfig) -> list[float]:
    state = nn.AdamState(learning_rate=cfg.mu_da)
    trace = []
    for step in range(cfg.num_steps):
        loss, grads = objective(model)
        if not np.isfinite(loss):
            raise nn.NonFiniteError(f"non-finite adaptation loss at step {step}")
        trace.append(loss)
        nn.adam_step(model.parameters(), grads, state)
    trace.append(objective(model, backward=False)[0])
    return trace


def _prepare(model: RangeClassifier, test_feats: Sequence[ScmFeature], cfg: AdaptConfig):
    x = stack_channels(test_feats)
    preds = model.predict(test_feats)
    conf = select_confident(preds, cfg)
    adapted = model.copy()
    adapted.classifier_frozen = True
    return x, preds, conf, adapted


def shot_adapt(model: RangeClassifier, test_feats: Sequence[ScmFeature], cfg: AdaptConfig = AdaptConfig(),
               grid: RangeGrid = RangeGrid()) -> tuple[RangeClassifier, AdaptReport]:
    x, preds, conf, adapted = _prepare(model, test_feats, cfg)
    if len(conf) == 0:
        raise EmptyConfidentSetError("no confident test samples; lower peak_dominance to relax the selection")
    conf_bins = np.argmax(preds[conf.indices], axis=1)
    pseudo = soften(conf_bins, LabelConfig(cfg.sigma_label), grid.num_classes)

    def objective(m, backward=True):
        return shot_objective(m, x, pseudo, conf.indices, cfg.beta, cfg.chunk_size, backward)

    trace = _run_adam(adapted, objective, cfg)
    pseudo_bins = np.full(len(x), -1)
    pseudo_bins[conf.indices] = conf_bins
    report = AdaptReport("shot", conf, trace, np.argmax(preds, axis=1),
                         np.argmax(adapted.predict(test_feats), axis=1), pseudo_bins)
    log.info("shot: |S|=%d/%d loss %.4f -> %.4f", len(conf), len(x), trace[0], trace[-1])
    return adapted, report


def jsea_pseudo_labels(preds: np.ndarray, energies: np.ndarray, conf: ConfidentSet, cfg: AdaptConfig,
                       grid: RangeGrid) -> tuple[np.ndarray, TransmissionLossEstimate]:
    d_hat = estimate_range(preds, grid)
    gamma = estimate_gamma(conf, energies, d_hat, cfg, grid)
    label_cfg = LabelConfig(cfg.sigma_label)
    pseudo = np.empty_like(preds)
    pseudo[conf.indices] = soften(np.argmax(preds[conf.indices], axis=1), label_cfg, grid.num_classes)
    for i in conf.complement:
        pseudo[i] = energy_pseudo_label(preds[i], energies[i], gamma, cfg, grid)
    return pseudo, gamma


def jsea_adapt(model: RangeClassifier, test_feats: Sequence[ScmFeature], cfg: AdaptConfig = AdaptConfig(),
               grid: RangeGrid = RangeGrid()) -> tuple[RangeClassifier, AdaptReport]:
    x, preds, conf, adapted = _prepare(model, test_feats, cfg)
    if len(conf) == 0:
        raise EmptyConfidentSetError("no confident test samples; the energy curve cannot be estimated")
    energies = np.array([f.energy for f in test_feats])
    pseudo, gamma = jsea_pseudo_labels(preds, energies, conf, cfg, grid)

    def objective(m, backward=True):
        return jsea_objective(m, x, pseudo, cfg.chunk_size, backward)

    trace = _run_adam(adapted, objective, cfg)
    report = AdaptReport("jsea", conf, trace, np.argmax(preds, axis=1),
                         np.argmax(adapted.predict(test_feats), axis=1), np.argmax(pseudo, axis=1), gamma)
    log.info("jsea: |S|=%d/%d loss %.4f -> %.4f", len(conf), len(x), trace[0], trace[-1])
    return adapted, report
