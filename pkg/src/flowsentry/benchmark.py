"""Planted-structure synthetic traffic for end-to-end runs.

Feature layout (22 columns):

* ``sig_*`` (8): one signature feature per family; high for that family.
  Benign traffic is high on ``sig_0`` only.
* ``prof_*`` (12): profile block. Broad for baseline traffic; for novel
  families each latent sub-cluster sits at its own binary level code
  (0.2 / 0.8), codes at Hamming distance >= 6 from each other.
* ``vol_*`` (2): volume-like fields, broad in the baseline and with a
  moderate spread inside each novel sub-cluster.

Novel families behave like tool-generated traffic: apart from the volume
fields their values barely move, so each sub-cluster maps to a compact
set of token sequences.

Baseline: Benign, two known families, and one held-out family that is
broad over every novel-family signature (it becomes ``0_other``
downstream). Part of the held-out family is tool-like with random
content. Chunk 1: two novel families with two latent sub-clusters each.
Chunk 2: three novel single-cluster families. Ground-truth labels of chunk
flows name the sub-cluster as ``<family>#<j>``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .flowdata import ClassSpec, Dataset, SyntheticSpec, generate_synthetic

LOW, HIGH, MID = 0.15, 0.85, 0.5

BENIGN = "Benign"
KNOWN = ("DDoS-LOIC-HTTP", "Bot")
HELD_OUT = "DoS-SlowHTTPTest"
CHUNK_FAMILIES = {
    1: {"DoS-Hulk": ("000111" * 2, "111000" * 2), "DDoS-HOIC": ("011011" * 2, "100100" * 2)},
    2: {"SSH-Bruteforce": ("000000011101",), "FTP-BruteForce": ("000001101010",), "Infiltration": ("001010100001",)},
}
SIGNATURES = (BENIGN, *KNOWN, "DoS-Hulk", "DDoS-HOIC", "SSH-Bruteforce", "FTP-BruteForce", "Infiltration")
N_PROFILE = 12
N_VOLUME = 2
FEATURES = tuple(
    [f"sig_{i}" for i in range(len(SIGNATURES))]
    + [f"prof_{i}" for i in range(N_PROFILE)]
    + [f"vol_{i}" for i in range(N_VOLUME)]
)
N_SIG = len(SIGNATURES)


@dataclass(frozen=True)
class BenchmarkSpec:
    seed: int = 0
    n_benign: int = 3000
    n_known: int = 800
    n_held_out: int = 600
    n_per_subcluster: int = 200
    signature_std: float = 0.03
    broad_std: float = 0.25
    novel_std: float = 0.0
    volume_std: float = 0.08
    held_out_coded_frac: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "BenchmarkSpec":
        return cls(**d)


def _baseline_class(label, sig_index, spec: BenchmarkSpec, n, broad_sigs=()) -> ClassSpec:
    means = [LOW] * N_SIG + [MID] * (N_PROFILE + N_VOLUME)
    stds = [spec.signature_std] * N_SIG + [spec.broad_std] * (N_PROFILE + N_VOLUME)
    if sig_index is not None:
        means[sig_index] = HIGH
    for j in broad_sigs:
        means[j], stds[j] = MID, spec.broad_std
    return ClassSpec(label, tuple(means), tuple(stds), n)


def _novel_class(label, family, code: str, spec: BenchmarkSpec) -> ClassSpec:
    means = [LOW] * N_SIG + [0.8 if b == "1" else 0.2 for b in code] + [MID] * N_VOLUME
    means[SIGNATURES.index(family)] = HIGH
    stds = [spec.novel_std] * (N_SIG + N_PROFILE) + [spec.volume_std] * N_VOLUME
    return ClassSpec(label, tuple(means), tuple(stds), spec.n_per_subcluster)


def baseline_spec(spec: BenchmarkSpec) -> SyntheticSpec:
    novel_sigs = range(1 + len(KNOWN), N_SIG)
    classes = (
        _baseline_class(BENIGN, 0, spec, spec.n_benign),
        _baseline_class(KNOWN[0], 1, spec, spec.n_known),
        _baseline_class(KNOWN[1], 2, spec, spec.n_known),
        _baseline_class(HELD_OUT, None, spec, spec.n_held_out, broad_sigs=novel_sigs),
    )
    return SyntheticSpec(classes, 1, spec.seed, FEATURES)


def chunk_spec(spec: BenchmarkSpec, chunk: int) -> SyntheticSpec:
    classes = []
    for family, codes in CHUNK_FAMILIES[chunk].items():
        for j, code in enumerate(codes, 1):
            classes.append(_novel_class(f"{family}#{j}", family, code, spec))
    return SyntheticSpec(tuple(classes), 1, spec.seed + 1000 * chunk, FEATURES)


def _code_held_out(base: Dataset, spec: BenchmarkSpec) -> Dataset:
    """Rewrite a fraction of held-out rows as tool-like traffic with random
    content: constant signature fields (novel ones randomly low or high) and
    a random binary profile code. Tool-likeness alone then never signals a
    particular family."""
    rows = np.flatnonzero(base.y == HELD_OUT)
    rng = np.random.default_rng([spec.seed, 1])
    n = int(round(spec.held_out_coded_frac * len(rows)))
    if n == 0:
        return base
    pick = np.sort(rng.choice(rows, n, replace=False))
    sig = np.full((n, N_SIG), LOW)
    sig[:, 1 + len(KNOWN):] = rng.choice([LOW, HIGH], size=(n, N_SIG - 1 - len(KNOWN)))
    X = base.X.copy()
    X.loc[pick, [f"sig_{i}" for i in range(N_SIG)]] = sig
    X.loc[pick, [f"prof_{i}" for i in range(N_PROFILE)]] = rng.choice([0.2, 0.8], size=(n, N_PROFILE))
    return Dataset(X, base.y, base.provenance)


def make_benchmark(spec: BenchmarkSpec | None = None) -> tuple[Dataset, list[Dataset]]:
    """``(baseline, [chunk1, chunk2])``."""
    spec = spec or BenchmarkSpec()
    if not 0 <= spec.held_out_coded_frac <= 1:
        raise ValueError("held_out_coded_frac must be in [0, 1]")
    base = _code_held_out(generate_synthetic(baseline_spec(spec)), spec)
    chunks = [generate_synthetic(chunk_spec(spec, c)) for c in sorted(CHUNK_FAMILIES)]
    return base, chunks


def planted_k(chunk: int) -> int:
    return sum(len(codes) for codes in CHUNK_FAMILIES[chunk].values())


def family_of(label: str) -> str:
    return str(label).split("#", 1)[0]


def centroid_oracle_accuracy(X, y, X_test, y_test) -> float:
    """Nearest-centroid accuracy in raw feature space (separability check)."""
    X, X_test = np.asarray(X, dtype=float), np.asarray(X_test, dtype=float)
    y = np.asarray(y)
    labels = sorted(set(y))
    cents = np.stack([X[y == c].mean(axis=0) for c in labels])
    d = ((X_test[:, None, :] - cents[None]) ** 2).sum(axis=2)
    pred = np.asarray(labels)[d.argmin(axis=1)]
    return float((pred == np.asarray(y_test)).mean())
