"""Perturbation probes for heuristic retrieval constraints.

Each probe is a query plus two or three documents built from a base document
so that one constraint's premise holds exactly. ``check`` scores the
documents with any ``scorer(q, d) -> float`` and reports pass, fail or tie.

Constraints (margin is the score difference in the expected direction):

========  =======================================================  ==========
TFC1      q={w}; d1 = d2 with one non-query token replaced by w     strict
TFC2      q={w}; tf(w) = t, t+1, t+2 at equal length; concave gain  non-strict
TDC       q={w1,w2}, df(w1) < df(w2); d1 has more w1, same totals   strict
LNC1      d2 = d1 plus one appended non-query token                 non-strict
LNC2      d2 = d1 repeated twice                                    non-strict
TF-LNC    d2 = d1 plus appended copies of w                         strict
TSFC      d1 holds exact w; d2 swaps them for neighbours, equal s   strict
========  =======================================================  ==========
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import OOV_ID
from .rng import make_rng

AXIOMS = ("TFC1", "TFC2", "TDC", "LNC1", "LNC2", "TF-LNC", "TSFC")
STRICT = frozenset({"TFC1", "TDC", "TF-LNC", "TSFC"})
TIE_TOL = 1e-9
TSFC_EPS = 0.05
TSFC_MAX_STEPS = 50
MAX_BASE_DRAWS = 100


class ProbeError(RuntimeError):
    """A probe could not be built (counted as skipped) or a scorer failed on it."""

    def __init__(self, message: str, probe: "AxiomProbe | None" = None):
        super().__init__(message)
        self.probe = probe


@dataclass(frozen=True)
class AxiomProbe:
    axiom: str
    query: np.ndarray
    docs: tuple[np.ndarray, ...]
    meta: dict = field(default_factory=dict)

    @property
    def strict(self) -> bool:
        return self.axiom in STRICT


@dataclass(frozen=True)
class CheckResult:
    outcome: str  # "pass" | "fail" | "tie"
    margin: float
    scores: tuple[float, ...]


@dataclass
class ProbeContext:
    """Corpus sample and (optionally) embeddings the probes are built from."""

    documents: list[np.ndarray]
    vocab_size: int
    embeddings: np.ndarray | None = None
    similarity: str = "cosine"
    sigma: float = 1.0
    df: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.documents:
            raise ValueError("probe context needs at least one document")
        self.documents = [np.asarray(getattr(d, "tokens", d), dtype=np.int64) for d in self.documents]
        self.df = np.zeros(self.vocab_size, dtype=np.int64)
        for d in self.documents:
            self.df[np.unique(d)] += 1

    @classmethod
    def for_scorer(cls, scorer, documents, vocab_size: int, embeddings=None) -> "ProbeContext":
        """Take embeddings and similarity from the scorer when it has them."""
        emb = embeddings if embeddings is not None else getattr(scorer, "embeddings", None)
        sim = getattr(scorer, "similarity", "cosine")
        sim = sim if isinstance(sim, str) else "cosine"
        return cls(list(documents), vocab_size, emb, sim, getattr(scorer, "sigma", 1.0))

    def candidates(self, exclude: np.ndarray = np.empty(0, dtype=np.int64)) -> np.ndarray:
        """Query-term candidates: seen in the corpus but in under half of it."""
        n = len(self.documents)
        ids = np.flatnonzero((self.df >= 1) & (2 * self.df < n))
        ids = ids[ids != OOV_ID]
        return np.setdiff1d(ids, exclude)

    def semantic_sum(self, w: int, doc: np.ndarray) -> float:
        return float(self._sims_to(w, self.embeddings[doc]).sum())

    def _sims_to(self, w: int, rows: np.ndarray) -> np.ndarray:
        u = self.embeddings[w]
        if self.similarity == "dot":
            return rows @ u
        if self.similarity == "cosine":
            nu = np.linalg.norm(u)
            nr = np.linalg.norm(rows, axis=-1)
            out = np.zeros(rows.shape[:-1])
            ok = (nr > 0) & (nu > 0)
            out[ok] = (rows[ok] @ u) / (nr[ok] * nu)
            return out
        if self.similarity == "gaussian":
            diff = rows - u
            return np.exp(-np.einsum("...i,...i->...", diff, diff) / (2.0 * self.sigma**2))
        raise ValueError(f"unknown similarity {self.similarity!r}")


def _counts(doc: np.ndarray, terms) -> dict[int, int]:
    return {int(t): int(np.count_nonzero(doc == t)) for t in terms}


def _meta(query, docs, ctx=None, semantic=False) -> dict:
    terms = sorted({int(t) for t in query})
    meta = {
        "counts": [_counts(d, terms) for d in docs],
        "lengths": [int(len(d)) for d in docs],
    }
    if semantic:
        meta["semantic"] = [ctx.semantic_sum(terms[0], d) for d in docs]
    return meta


def _pick(rng, ids: np.ndarray, k: int = 1) -> np.ndarray:
    if len(ids) < k:
        raise ProbeError(f"need {k} candidate query terms, corpus offers {len(ids)}")
    return rng.choice(ids, size=k, replace=False)


def _free_positions(doc: np.ndarray, query_terms, start: int = 0) -> np.ndarray:
    pos = np.flatnonzero(~np.isin(doc, list(query_terms)))
    return pos[pos >= start]


def _filler(rng, ctx: ProbeContext, avoid) -> int:
    while True:
        t = int(rng.integers(1, ctx.vocab_size))
        if t not in avoid:
            return t


def _probe_tfc1(base, ctx, rng, edit_start=0):
    (w,) = _pick(rng, ctx.candidates(exclude=np.unique(base)))
    free = _free_positions(base, [w], edit_start)
    if len(free) == 0:
        raise ProbeError("no editable position after edit_start")
    p = int(rng.choice(free))
    d2 = base.copy()
    d1 = base.copy()
    d1[p] = w
    q = np.array([w])
    return q, (d1, d2), {"edit_position": p}


def _probe_tfc2(base, ctx, rng, edit_start=0):
    (w,) = _pick(rng, ctx.candidates(exclude=np.unique(base)))
    t = int(rng.integers(1, 4))
    free = _free_positions(base, [w], edit_start)
    if len(free) < t + 2:
        raise ProbeError("base document too short for TFC2")
    pos = rng.choice(free, size=t + 2, replace=False)
    docs = []
    for k in (t, t + 1, t + 2):
        d = base.copy()
        d[pos[:k]] = w
        docs.append(d)
    return np.array([w]), tuple(docs), {"tf": [t, t + 1, t + 2]}


def _probe_tdc(base, ctx, rng, edit_start=0):
    cand = ctx.candidates(exclude=np.unique(base))
    for _ in range(MAX_BASE_DRAWS):
        w1, w2 = (int(x) for x in _pick(rng, cand, 2))
        if ctx.df[w1] != ctx.df[w2]:
            break
    else:
        raise ProbeError("no candidate pair with distinct document frequencies")
    if ctx.df[w1] > ctx.df[w2]:
        w1, w2 = w2, w1
    a = int(rng.integers(2, 5))
    b = int(rng.integers(1, a))
    free = _free_positions(base, [w1, w2], edit_start)
    if len(free) < a + b:
        raise ProbeError("base document too short for TDC")
    pos = rng.choice(free, size=a + b, replace=False)
    d1, d2 = base.copy(), base.copy()
    d1[pos[:a]], d1[pos[a:]] = w1, w2
    d2[pos[:a]], d2[pos[a:]] = w2, w1
    return np.array([w1, w2]), (d1, d2), {"discriminative": w1, "common": w2, "a": a, "b": b}


def _with_term(base, ctx, rng, edit_start=0):
    (w,) = _pick(rng, ctx.candidates(exclude=np.unique(base)))
    free = _free_positions(base, [w], edit_start)
    c = int(rng.integers(1, 3))
    if len(free) < c:
        raise ProbeError("base document too short")
    d1 = base.copy()
    d1[rng.choice(free, size=c, replace=False)] = w
    return w, d1


def _probe_lnc1(base, ctx, rng, edit_start=0):
    w, d1 = _with_term(base, ctx, rng, edit_start)
    d2 = np.append(d1, _filler(rng, ctx, {w, OOV_ID}))
    return np.array([w]), (d1, d2), {}


def _probe_lnc2(base, ctx, rng, edit_start=0):
    w, d1 = _with_term(base, ctx, rng, edit_start)
    return np.array([w]), (d1, np.concatenate([d1, d1])), {"k": 2}


def _probe_tf_lnc(base, ctx, rng, edit_start=0):
    w, d1 = _with_term(base, ctx, rng, edit_start)
    c = int(rng.integers(1, 4))
    return np.array([w]), (d1, np.concatenate([d1, np.full(c, w)])), {"appended": c}


def _probe_tsfc(base, ctx, rng, edit_start=0):
    """Exact matches in d1; d2 swaps each for a near neighbour, then balances s(w, d)."""
    if ctx.embeddings is None:
        raise ProbeError("TSFC needs an embedding table")
    (w,) = _pick(rng, ctx.candidates(exclude=np.unique(base)))
    c = int(rng.integers(1, 4))
    free = _free_positions(base, [w], edit_start)
    if len(free) < c + 1:
        raise ProbeError("base document too short for TSFC")
    exact = rng.choice(free, size=c, replace=False)
    d1 = base.copy()
    d1[exact] = w

    vocab_sims = ctx._sims_to(w, ctx.embeddings)
    allowed = np.ones(ctx.vocab_size, dtype=bool)
    allowed[[w, OOV_ID]] = False
    order = np.argsort(-np.where(allowed, vocab_sims, -np.inf), kind="stable")
    d2 = d1.copy()
    d2[exact] = order[:c]  # nearest non-identical neighbours, one per occurrence

    s1 = ctx.semantic_sum(w, d1)
    tol = TSFC_EPS * abs(s1)
    editable = np.setdiff1d(np.arange(len(d2)), exact)
    editable = editable[editable >= edit_start]
    cand_tokens = np.flatnonzero(allowed)
    cand_sims = vocab_sims[cand_tokens]
    for _ in range(TSFC_MAX_STEPS):
        deficit = s1 - ctx.semantic_sum(w, d2)
        if abs(deficit) <= tol:
            break
        cur = ctx._sims_to(w, ctx.embeddings[d2[editable]])
        gain = cand_sims[None, :] - cur[:, None]
        k = int(np.argmin(np.abs(deficit - gain)))
        i, j = divmod(k, len(cand_tokens))
        if abs(deficit - gain[i, j]) >= abs(deficit):
            break
        d2[editable[i]] = cand_tokens[j]
    s2 = ctx.semantic_sum(w, d2)
    if abs(s1 - s2) > tol:
        raise ProbeError("could not balance semantic similarity within tolerance")
    return np.array([w]), (d1, d2), {"exact_positions": sorted(int(p) for p in exact)}


_BUILDERS: dict[str, Callable] = {
    "TFC1": _probe_tfc1,
    "TFC2": _probe_tfc2,
    "TDC": _probe_tdc,
    "LNC1": _probe_lnc1,
    "LNC2": _probe_lnc2,
    "TF-LNC": _probe_tf_lnc,
    "TSFC": _probe_tsfc,
}


def gen_probe(axiom: str, base, ctx: ProbeContext, rng, edit_start: int = 0) -> AxiomProbe:
    """Build one probe for ``axiom`` from ``base``.

    ``edit_start`` restricts edits (replacements, inserted terms) to positions
    at or after it. Raises :class:`ProbeError` when the base cannot host the
    construction.
    """
    if axiom not in _BUILDERS:
        raise ValueError(f"unknown axiom {axiom!r}; choose from {AXIOMS}")
    base = np.asarray(getattr(base, "tokens", base), dtype=np.int64)
    if len(base) <= edit_start:
        raise ProbeError("base document ends before edit_start")
    q, docs, extra = _BUILDERS[axiom](base, ctx, rng, edit_start)
    meta = _meta(q, docs, ctx, semantic=axiom == "TSFC")
    meta.update(extra)
    for d in docs:
        d.setflags(write=False)
    return AxiomProbe(axiom, q, tuple(docs), meta)


def verify_probe(probe: AxiomProbe, ctx: ProbeContext | None = None) -> bool:
    """Recompute counts, lengths and semantic sums from the documents."""
    fresh = _meta(probe.query, probe.docs, ctx, semantic="semantic" in probe.meta)
    return all(fresh[k] == probe.meta[k] for k in fresh)


def margin_of(axiom: str, s: Sequence[float]) -> float:
    if axiom == "TFC2":
        return (s[1] - s[0]) - (s[2] - s[1])
    if axiom in ("LNC2", "TF-LNC"):
        return s[1] - s[0]
    return s[0] - s[1]


def check(scorer, probe: AxiomProbe, tie_tol: float = TIE_TOL) -> CheckResult:
    """Score the probe; ``tie_tol`` is relative to max(1, |scores|)."""
    try:
        scores = tuple(float(scorer(probe.query, d)) for d in probe.docs)
    except Exception as exc:
        raise ProbeError(f"scorer failed on {probe.axiom} probe: {exc}", probe) from exc
    margin = margin_of(probe.axiom, scores)
    tol = tie_tol * max(1.0, *(abs(x) for x in scores))
    if probe.strict:
        outcome = "pass" if margin > tol else ("tie" if margin >= -tol else "fail")
    else:
        outcome = "pass" if margin >= -tol else "fail"
    return CheckResult(outcome, margin, scores)


@dataclass
class AxiomStats:
    n: int = 0
    passed: int = 0
    failed: int = 0
    ties: int = 0
    skipped: int = 0
    margin_sum: float = 0.0

    @property
    def mean_margin(self) -> float:
        return self.margin_sum / self.n if self.n else 0.0

    @property
    def pass_rate(self) -> float:
        return self.passed / self.n if self.n else 0.0

    def add(self, result: CheckResult):
        self.n += 1
        self.margin_sum += result.margin
        if result.outcome == "pass":
            self.passed += 1
        elif result.outcome == "tie":
            self.ties += 1
        else:
            self.failed += 1


@dataclass
class AxiomReport:
    stats: dict[str, AxiomStats]
    details: list[tuple[str, int, str, float]] = field(default_factory=list)

    def pass_rate(self, axiom: str) -> float:
        return self.stats[axiom].pass_rate

    def to_dict(self) -> dict:
        return {
            a: {
                "n": s.n,
                "pass": s.passed,
                "fail": s.failed,
                "tie": s.ties,
                "skipped": s.skipped,
                "mean_margin": float(f"{s.mean_margin:.6g}"),
            }
            for a, s in self.stats.items()
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_details(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axiom", "probe", "outcome", "margin"])
            for axiom, i, outcome, margin in self.details:
                w.writerow([axiom, i, outcome, f"{margin:.6g}"])


def _probe_streams(seed: int, axioms, n: int):
    root = np.random.SeedSequence(int(seed) & (2**64 - 1))
    per_axiom = root.spawn(len(AXIOMS))
    return {a: per_axiom[AXIOMS.index(a)].spawn(n) for a in axioms}


def _run_one(args):
    scorer, ctx, axiom, i, stream, tie_tol, edit_start = args
    rng = make_rng(stream)
    usable = [d for d in ctx.documents if len(d) > edit_start]
    if not usable or (axiom == "TSFC" and ctx.embeddings is None):
        return axiom, i, None
    for _ in range(MAX_BASE_DRAWS):
        base = usable[int(rng.integers(len(usable)))]
        try:
            probe = gen_probe(axiom, base, ctx, rng, edit_start)
        except ProbeError:
            continue
        return axiom, i, check(scorer, probe, tie_tol)
    return axiom, i, None


def run_suite(
    scorer,
    ctx: ProbeContext,
    n: int = 200,
    seed: int = 0,
    tie_tol: float = TIE_TOL,
    axioms: Sequence[str] = AXIOMS,
    edit_start: int = 0,
    workers: int = 1,
    keep_details: bool = False,
) -> AxiomReport:
    """Run ``n`` probes per axiom; each probe has its own RNG stream split from ``seed``.

    A probe whose construction keeps failing is counted as skipped. Results
    do not depend on ``workers``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for a in axioms:
        if a not in _BUILDERS:
            raise ValueError(f"unknown axiom {a!r}")
    streams = _probe_streams(seed, axioms, n)
    jobs = [(scorer, ctx, a, i, streams[a][i], tie_tol, edit_start) for a in axioms for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_one(j) for j in jobs]
    report = AxiomReport({a: AxiomStats() for a in axioms})
    for axiom, i, res in results:
        if res is None:
            report.stats[axiom].skipped += 1
            continue
        report.stats[axiom].add(res)
        if keep_details:
            report.details.append((axiom, i, res.outcome, res.margin))
    return report
