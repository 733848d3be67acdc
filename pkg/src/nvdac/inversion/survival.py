"""Which orientation families still contribute to the spectra."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..config import DEFAULT_CONFIG, ToolkitConfig
from ..stress import ORIENTATION_LABELS, get_orientation
from .core import ExperimentDataset, FitResult, ParameterLayout
from .seeding import estimate_noise, fit_dataset


@dataclass
class HypothesisFit:
    groups: tuple[str, ...]
    residual_norm: float
    rss: float
    n_params: int
    score: float
    result: FitResult


@dataclass
class SurvivalReport:
    ranked: list[HypothesisFit]
    margin: float
    noise_floor: float
    margin_ratio: float
    low_confidence: bool
    notes: list[str] = field(default_factory=list)

    @property
    def best(self) -> HypothesisFit:
        return self.ranked[0]

    def to_dict(self) -> dict:
        return {
            "ranking": [
                {"groups": list(h.groups), "residual_norm": h.residual_norm, "rss": h.rss,
                 "n_params": h.n_params, "score": h.score}
                for h in self.ranked
            ],
            "margin": self.margin,
            "noise_floor": self.noise_floor,
            "margin_ratio": self.margin_ratio,
            "low_confidence": self.low_confidence,
            "notes": list(self.notes),
        }


def default_hypotheses(dataset: ExperimentDataset) -> list[tuple[str, ...]]:
    """Alive-group subsets worth distinguishing.

    With stress and field vectors free, the cubic symmetry maps any subset
    onto any other of the same size, so one representative per size is
    enough. A known nonzero field breaks that symmetry; then every non-empty
    subset is returned.
    """
    fixed_field = any(m.known_field is not None and np.any(m.known_field) for m in dataset.meta)
    sizes = range(1, len(ORIENTATION_LABELS) + 1)
    if fixed_field:
        return [c for k in sizes for c in itertools.combinations(ORIENTATION_LABELS, k)]
    return [ORIENTATION_LABELS[:k] for k in sizes]


def group_survival_scan(
    dataset: ExperimentDataset,
    hypotheses=None,
    config: ToolkitConfig = DEFAULT_CONFIG,
    max_stress_candidates: int = 4,
    seed: int = 0,
) -> SurvivalReport:
    """Fit every alive-group hypothesis and rank them.

    The ranking score is ``N ln(RSS/N) + k ln N`` (residual with a
    parameter-count penalty, ``k`` free parameters, ``N`` points). The margin
    is the RSS gap between the two best hypotheses, compared with the noise
    floor ``s^2 sqrt(2N)``, the spread of the RSS expected from noise alone
    (``s`` estimated from the data). Fewer than two spectra with a field
    leave the families indistinguishable by their field response, so the
    report is then flagged low-confidence.
    """
    hyps = [tuple(get_orientation(g).label for g in h) for h in (hypotheses or default_hypotheses(dataset))]
    if not hyps:
        raise ValueError("no hypotheses to test")
    n = dataset.n_points
    fits = []
    for groups in hyps:
        ds = replace(dataset, alive_groups=groups)
        res = fit_dataset(ds, config, max_stress_candidates=max_stress_candidates, seed=seed)
        rss = res.residual_norm**2
        k = len(res.free)
        score = n * math.log(max(rss, 1e-300) / n) + k * math.log(n)
        fits.append(HypothesisFit(groups, res.residual_norm, rss, k, score, res))
    fits.sort(key=lambda h: (h.score, h.groups))
    noise = math.sqrt(float(np.mean([estimate_noise(t) ** 2 for t in dataset.spectra])))
    floor = noise * noise * math.sqrt(2.0 * n)
    margin = fits[1].rss - fits[0].rss if len(fits) > 1 else math.inf
    ratio = margin / floor if floor > 0 else math.inf
    notes = []
    n_field = sum(1 for m in dataset.meta if m.known_field is None or np.any(m.known_field))
    low = n_field < 2
    if low:
        notes.append(f"only {n_field} spectrum(s) with a magnetic field; at least 2 are needed")
    if len(fits) > 1 and ratio < 3:
        notes.append("best and second-best hypotheses are within 3 noise floors")
    return SurvivalReport(fits, float(margin), float(floor), float(ratio), low, notes)


def count_parameters(dataset: ExperimentDataset) -> int:
    return len(ParameterLayout(dataset).names)
