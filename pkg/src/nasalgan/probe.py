"""Latent-space interpretability suite.

Generate-and-label batches feed a chi-square ranking of the continuous
latent variables against the detector's nasality verdicts; candidate
variables are then manipulated far outside their training range, singly
(default levels -5..5 step 1 over 100 base vectors) or in pairs (11 x 11
grids whose cells record the proportion of base vectors yielding nasal
vowel / nasal consonant detections).

The probe treats the generator as a black box: any ``generate_fn(code) ->
AudioClip`` works, and labeling is any ``label_fn(clip) -> TokenLabel``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import save_wav
from .ciwgan import LatentCode, sample_latent

DEFAULT_LEVELS = tuple(range(-5, 6))
DEFAULT_N_BASE = 100
DEFAULT_TOP_K = 7

FEATURES = ("nasal_vowel", "nasal_consonant")


class ProbeError(Exception):
    pass


@dataclass
class LabeledBatch:
    codes: list  # LatentCode
    labels: list  # TokenLabel
    generator_id: str = ""
    detector_id: str = ""

    def __post_init__(self):
        if len(self.codes) != len(self.labels):
            raise ProbeError("codes and labels must align")
        if self.codes:
            nz = len(self.codes[0].z)
            if any(len(c.z) != nz for c in self.codes):
                raise ProbeError("all codes must share dimensions")

    def feature_values(self, feature):
        if feature == "nasal_vowel":
            return np.array([l.nasal_vowel_present for l in self.labels])
        if feature == "nasal_consonant":
            return np.array([l.nasal_consonant_present for l in self.labels])
        raise ProbeError(f"unknown feature {feature!r}")


def label_generated_batch(pairs, label_fn, generator_id="", detector_id="") -> LabeledBatch:
    """Label (code, clip) pairs, e.g. the output of ``ciwgan.generate_batch``."""
    codes = [c for c, _ in pairs]
    labels = [label_fn(clip) for _, clip in pairs]
    return LabeledBatch(codes, labels, generator_id, detector_id)


# ---------------------------------------------------------------------------
# chi-square ranking
# ---------------------------------------------------------------------------

def chi_square_from_table(table):
    """Pearson chi-square of a 2x2 contingency table (no continuity
    correction); 0 for degenerate margins."""
    table = np.asarray(table, dtype=np.float64)
    n = table.sum()
    if n == 0:
        return 0.0
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    if np.any(expected == 0):
        return 0.0
    return float(np.sum((table - expected) ** 2 / expected))


def point_biserial(x, y):
    """Correlation of a continuous variable with a boolean outcome."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    if y.all() or not y.any() or np.std(x) == 0:
        return 0.0
    p = y.mean()
    return float((x[y].mean() - x[~y].mean()) * np.sqrt(p * (1 - p)) / np.std(x))


@dataclass
class ChiSquareReport:
    feature: str
    scores: np.ndarray  # per z variable
    ranking: np.ndarray  # variable indices, descending score
    top_k: int
    correlations: np.ndarray  # point-biserial cross-check
    low_expected: list  # variable indices with an expected cell count < 5

    @property
    def top_variables(self):
        return list(self.ranking[:self.top_k])

    def to_csv(self, path):
        top = set(self.top_variables)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "chi_square", "rank", "top_k",
                        "point_biserial", "low_expected"])
            rank_of = {int(v): r for r, v in enumerate(self.ranking)}
            for i, s in enumerate(self.scores):
                w.writerow([i, f"{s:.6g}", rank_of[i], int(i in top),
                            f"{self.correlations[i]:.6g}", int(i in self.low_expected)])


def chi_square_scores(batch: LabeledBatch, target, top_k=DEFAULT_TOP_K) -> ChiSquareReport:
    """Score every z variable's sign against a boolean detected feature.

    Each variable is binarized at 0; the 2x2 table of (sign, target) counts
    gets the Pearson chi-square statistic.  Degenerate targets (all true or
    all false) are unscorable.
    """
    y = batch.feature_values(target)
    if y.all() or not y.any():
        raise ProbeError(f"target {target!r} is degenerate "
                         f"({'all true' if y.all() else 'all false'}): unscorable")
    z = np.stack([c.z for c in batch.codes])
    n_vars = z.shape[1]
    scores = np.zeros(n_vars)
    corrs = np.zeros(n_vars)
    low_expected = []
    for j in range(n_vars):
        pos = z[:, j] > 0
        table = np.array([[np.sum(pos & y), np.sum(pos & ~y)],
                          [np.sum(~pos & y), np.sum(~pos & ~y)]])
        scores[j] = chi_square_from_table(table)
        n = table.sum()
        expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
        if np.any(expected < 5):
            low_expected.append(j)
        corrs[j] = point_biserial(z[:, j], y)
    ranking = np.argsort(-scores, kind="stable")
    return ChiSquareReport(target, scores, ranking, top_k, corrs, low_expected)


def covariance_check(batch: LabeledBatch):
    """2x2 table of nasal_vowel x nasal_consonant plus the conditional rate
    P(nasal_consonant | nasal_vowel); the rate is None when undefined."""
    if not batch.codes:
        raise ProbeError("empty batch")
    nv = batch.feature_values("nasal_vowel")
    nc = batch.feature_values("nasal_consonant")
    table = np.array([[np.sum(nv & nc), np.sum(nv & ~nc)],
                      [np.sum(~nv & nc), np.sum(~nv & ~nc)]])
    rate = float(np.sum(nv & nc) / np.sum(nv)) if nv.any() else None
    return table, rate


# ---------------------------------------------------------------------------
# latent manipulation
# ---------------------------------------------------------------------------

def _base_codes(n_phi, n_z, n_base, seed, phi_class=0):
    """Fresh base vectors with phi pinned to one class during manipulation."""
    rng = np.random.default_rng(seed)
    codes = []
    for _ in range(n_base):
        c = sample_latent(n_phi, n_z, rng)
        phi = np.zeros(n_phi)
        phi[phi_class] = 1.0
        codes.append(LatentCode(phi, c.z))
    return codes


@dataclass
class SweepResult:
    variable: int
    levels: tuple
    n_base: int
    prop_nasal_vowel: np.ndarray  # per level
    prop_nasal_consonant: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "prop_nasal_vowel", "prop_nasal_consonant"])
            for lv, pv, pc in zip(self.levels, self.prop_nasal_vowel,
                                  self.prop_nasal_consonant):
                w.writerow([lv, f"{pv:.6g}", f"{pc:.6g}"])


def manipulate_single(generate_fn, label_fn, var, n_phi, n_z,
                      levels=DEFAULT_LEVELS, n_base=DEFAULT_N_BASE, seed=0,
                      phi_class=0, clip_dir=None) -> SweepResult:
    """Sweep one z variable over ``levels`` for ``n_base`` fresh base vectors,
    holding everything else fixed; aggregate detector proportions per level."""
    if not 0 <= var < n_z:
        raise ProbeError(f"variable {var} out of range [0, {n_z})")
    if not levels:
        raise ProbeError("levels must be non-empty")
    bases = _base_codes(n_phi, n_z, n_base, seed, phi_class)
    nv = np.zeros(len(levels))
    nc = np.zeros(len(levels))
    if clip_dir:
        Path(clip_dir).mkdir(parents=True, exist_ok=True)
    for li, level in enumerate(levels):
        for bi, base in enumerate(bases):
            clip = generate_fn(base.with_z(var, level))
            label = label_fn(clip)
            nv[li] += label.nasal_vowel_present
            nc[li] += label.nasal_consonant_present
            if clip_dir:
                save_wav(clip, Path(clip_dir) / f"z{var}_l{li:02d}_b{bi:03d}.wav")
    return SweepResult(var, tuple(levels), n_base, nv / n_base, nc / n_base)


@dataclass
class ManipulationGrid:
    var_x: int
    var_y: int
    levels: tuple
    n_base: int
    prop_nasal_vowel: np.ndarray  # [len(levels), len(levels)], index [xi, yi]
    prop_nasal_consonant: np.ndarray
    modal_class: np.ndarray  # object array of syllable-class strings

    @property
    def n_cells(self):
        return len(self.levels) ** 2

    def proportions(self, feature):
        if feature == "nasal_vowel":
            return self.prop_nasal_vowel
        if feature == "nasal_consonant":
            return self.prop_nasal_consonant
        raise ProbeError(f"unknown feature {feature!r}")


def manipulate_pair(generate_fn, label_fn, var_x, var_y, n_phi, n_z,
                    levels=DEFAULT_LEVELS, n_base=DEFAULT_N_BASE, seed=0,
                    phi_class=0) -> ManipulationGrid:
    """Joint sweep of two z variables; each cell aggregates ``n_base``
    labeled generations plus the modal syllable class."""
    if var_x == var_y:
        raise ProbeError("var_x and var_y must differ")
    for v in (var_x, var_y):
        if not 0 <= v < n_z:
            raise ProbeError(f"variable {v} out of range [0, {n_z})")
    bases = _base_codes(n_phi, n_z, n_base, seed, phi_class)
    k = len(levels)
    nv = np.zeros((k, k))
    nc = np.zeros((k, k))
    modal = np.empty((k, k), dtype=object)
    for xi, vx in enumerate(levels):
        for yi, vy in enumerate(levels):
            counts = {}
            for base in bases:
                code = base.with_z(var_x, vx).with_z(var_y, vy)
                label = label_fn(generate_fn(code))
                nv[xi, yi] += label.nasal_vowel_present
                nc[xi, yi] += label.nasal_consonant_present
                counts[label.syllable_class] = counts.get(label.syllable_class, 0) + 1
            modal[xi, yi] = max(sorted(counts), key=counts.get)
    return ManipulationGrid(var_x, var_y, tuple(levels), n_base,
                            nv / n_base, nc / n_base, modal)


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def grid_to_csv(grid: ManipulationGrid, feature, path):
    props = grid.proportions(feature)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x_level", "y_level", "proportion", "modal_class"])
        for xi, vx in enumerate(grid.levels):
            for yi, vy in enumerate(grid.levels):
                w.writerow([vx, vy, f"{props[xi, yi]:.6g}", grid.modal_class[xi, yi]])


# heatmap ink colors at proportion 1 (0 is white): green for nasal vowels,
# red for nasal consonants, matching the published figures
FEATURE_COLORS = {"nasal_vowel": (0, 255, 0), "nasal_consonant": (255, 0, 0)}


def grid_to_ppm(grid: ManipulationGrid, feature, path, cell_px=16):
    """Binary P6 portable pixel map; intensity linear in the proportion."""
    props = grid.proportions(feature)
    ink = FEATURE_COLORS[feature]
    k = len(grid.levels)
    img = np.zeros((k, k, 3), dtype=np.uint8)
    for ch in range(3):
        # rows top-down are descending y levels; x left to right
        p = props.T[::-1, :]
        img[:, :, ch] = np.round(255 - p * (255 - ink[ch])).astype(np.uint8)
    img = np.repeat(np.repeat(img, cell_px, axis=0), cell_px, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def export_heatmap(grid: ManipulationGrid, feature, path):
    """Write ``<path>.csv`` and ``<path>.ppm`` for one feature of a grid."""
    if feature not in FEATURES:
        raise ProbeError(f"unknown feature {feature!r}")
    path = Path(path)
    grid_to_csv(grid, feature, path.with_suffix(".csv"))
    grid_to_ppm(grid, feature, path.with_suffix(".ppm"))
