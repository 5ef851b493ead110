"""Seeded synthetic cohorts with a planted severity/treatment signal.

Each patient carries a latent severity in [0, 1].  Severe patients record
more diseases and more of the severity-linked ones.  Every disease has one
designated effective treatment; diseases left untreated push severity up,
treated ones pull it down.  The readmission label after each visit is a
logistic function of the post-visit severity, with the intercept
calibrated so the label rate hits the configured prevalence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq

from .data import Cohort, PatientRecord, Visit, build_vocab
from .errors import ValidationError


@dataclass(frozen=True)
class SynthConfig:
    patients: int = 500
    disease_vocab: int = 50
    treatment_vocab: int = 120
    mean_extra_visits: float = 3.0
    max_extra_visits: int = 10
    severity_low: float = 0.2
    severity_high: float = 0.8
    linked_fraction: float = 0.2
    linked_weight: float = 5.0
    max_extra_diseases: int = 7
    q_eff: float = 0.6
    mean_distractors: float = 1.0
    max_distractors: int = 4
    worsen: float = 0.15
    improve: float = 0.10
    severity_noise: float = 0.05
    label_slope: float = 4.0
    prevalence: float = 0.3
    gap_min: int = 20
    gap_max: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("patients", "disease_vocab", "treatment_vocab"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 <= self.q_eff <= 1.0:
            raise ValidationError("q_eff must lie in [0, 1]")
        if not 0.0 < self.prevalence < 1.0:
            raise ValidationError("prevalence must lie in (0, 1)")
        if not 0.0 < self.linked_fraction <= 1.0:
            raise ValidationError("linked_fraction must lie in (0, 1]")
        if self.gap_min > self.gap_max or self.gap_min < 0:
            raise ValidationError("visit gap bounds are inconsistent")
        if self.severity_noise < 0:
            raise ValidationError("severity_noise must be nonnegative")

    @classmethod
    def large_scale(cls, **overrides):
        """Vocabulary sizes matching the chronic cohorts (~240 diseases, ~1100 treatments)."""
        return cls(**{"disease_vocab": 240, "treatment_vocab": 1100, **overrides})

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def disease_code(i):
    """ICD-10-shaped three-character code: A00, A01, ..., A99, B00, ..."""
    return f"{chr(ord('A') + i // 100)}{i % 100:02d}"


def treatment_code(j):
    return f"P{j:04d}"


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def calibrate_intercept(severities, slope, prevalence):
    """Intercept ``b`` with mean(sigmoid(slope * s + b)) == prevalence."""
    s = np.asarray(severities, dtype=np.float64)
    return brentq(lambda b: _sigmoid(slope * s + b).mean() - prevalence, -60.0, 60.0, xtol=1e-12)


def _simulate_patient(cfg, rng, n_linked):
    sev = rng.uniform(cfg.severity_low, cfg.severity_high)
    n_visits = 2 + min(int(rng.poisson(cfg.mean_extra_visits)), cfg.max_extra_visits)
    time = int(rng.integers(0, 366))
    visits, post = [], []
    for t in range(n_visits):
        if t:
            time += int(rng.integers(cfg.gap_min, cfg.gap_max + 1))
        k = 1 + min(int(rng.poisson(1.0 + 3.0 * sev)), cfg.max_extra_diseases)
        k = min(k, cfg.disease_vocab)
        w = np.ones(cfg.disease_vocab)
        w[:n_linked] = 1.0 + cfg.linked_weight * sev
        diseases = rng.choice(cfg.disease_vocab, size=k, replace=False, p=w / w.sum())
        diseases = sorted(int(d) for d in diseases)
        treatments = [d % cfg.treatment_vocab for d in diseases if rng.random() < cfg.q_eff]
        n_distract = min(int(rng.poisson(cfg.mean_distractors)), cfg.max_distractors)
        treatments += [int(x) for x in rng.integers(0, cfg.treatment_vocab, size=n_distract)]
        given = set(treatments)
        treated = sum(1 for d in diseases if d % cfg.treatment_vocab in given) / k
        noise = rng.normal(0.0, cfg.severity_noise)
        sev = float(np.clip(sev + cfg.worsen * (1.0 - treated) - cfg.improve * treated + noise, 0.0, 1.0))
        visits.append((time, diseases, treatments))
        post.append(sev)
    return visits, post


def gen_synthetic(cfg=SynthConfig()):
    """Generate a deterministic synthetic cohort from ``cfg``."""
    root = np.random.SeedSequence([cfg.seed, 0x73796E74])
    sim_seq, label_seq = root.spawn(2)
    rng = np.random.default_rng(sim_seq)
    n_linked = max(1, int(round(cfg.linked_fraction * cfg.disease_vocab)))

    sims = [_simulate_patient(cfg, rng, n_linked) for _ in range(cfg.patients)]
    all_sev = np.concatenate([post for _, post in sims])
    b = calibrate_intercept(all_sev, cfg.label_slope, cfg.prevalence)

    lrng = np.random.default_rng(label_seq)
    width = len(str(cfg.patients - 1))
    records = []
    for p, (visits, post) in enumerate(sims):
        probs = _sigmoid(cfg.label_slope * np.asarray(post) + b)
        labels = (lrng.random(len(post)) < probs).astype(int)
        out = []
        for t, (time, diseases, treatments) in enumerate(visits):
            out.append(Visit(
                time=time,
                diseases=tuple(disease_code(d) for d in diseases),
                treatments=tuple(treatment_code(j) for j in treatments),
                unplanned=bool(t > 0 and labels[t - 1]),
                label=int(labels[t]),
            ))
        records.append(PatientRecord(f"S{p:0{width}d}", tuple(out)))

    provenance = {"generator": asdict(cfg), "seed": cfg.seed, "config_digest": cfg.digest(),
                  "intercept": b}
    return Cohort(records, build_vocab(records), provenance)
