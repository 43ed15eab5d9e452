"""Metropolis-Hastings-within-Gibbs sampler over change points and segment classes.

Each outer iteration (``mode="dp"``) refreshes the per-segment
coefficients, runs ``nc_iter`` nested Gibbs sweeps over class means,
class covariances, class noise variances and labels, then applies one
birth, death or update move to the change points.  ``mode="baseline"``
skips the class structure entirely and keeps every segment in its own
class, which is the classical marginalized change point sampler.

Segments created by a move always receive fresh, distinct labels; the
nested sweeps decide afterwards whether they join an existing class.
"""

from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .distributions import (
    inv_gamma_sample_batch,
    inv_wishart_sample_batch,
    make_rng,
    mvn_sample_batch,
)
from .errors import InvalidArgumentError, NumericalDomainError
from .gibbs import (
    class_covs_posterior_batch,
    class_means_posterior_batch,
    class_noise_var_posterior,
    resample_labels,
    segment_params_posterior_batch,
)
from .marginal import PosteriorEvaluator, log_prior_tau
from .model import (
    ClassAssignment,
    ClassParams,
    Hyperparameters,
    Segmentation,
    TimeSeries,
    compact_labels,
)

MODES = ("baseline", "dp")


@dataclass(frozen=True)
class MoveProbabilities:
    b: float
    d: float
    u: float


def move_probabilities(k: int, k_max: int) -> MoveProbabilities:
    if not 0 <= k <= k_max:
        raise InvalidArgumentError(f"K={k} outside 0..{k_max}")
    if k == 0:
        return MoveProbabilities(0.5, 0.0, 0.5)
    if k == k_max:
        return MoveProbabilities(0.0, 0.5, 0.5)
    third = 1.0 / 3.0
    return MoveProbabilities(third, third, third)


@dataclass(eq=False)
class ChainState:
    tau: tuple
    labels: np.ndarray
    phi: np.ndarray
    classes: ClassParams
    iteration: int = 0
    log_post: float = float("nan")

    @property
    def k(self) -> int:
        return len(self.tau)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "tau": list(self.tau),
            "labels": [int(v) for v in self.labels],
            "phi": self.phi.tolist(),
            "class_means": self.classes.means.tolist(),
            "class_covs": self.classes.covs.tolist(),
            "class_noise_vars": self.classes.noise_vars.tolist(),
            "log_post": self.log_post,
        }


@dataclass
class Candidate:
    """A proposed change point configuration.

    ``raw_labels`` may contain ids ``>= V`` for fresh classes; ``origin[i]``
    is the index of the current segment that new segment ``i`` copies, or
    ``-1`` when the segment is new.
    """

    tau: tuple
    raw_labels: np.ndarray
    origin: np.ndarray
    log_post: float


@dataclass
class MoveStats:
    proposed: Counter = field(default_factory=Counter)
    accepted: Counter = field(default_factory=Counter)

    def record(self, move: str, accepted: bool) -> None:
        self.proposed[move] += 1
        if accepted:
            self.accepted[move] += 1

    def as_dict(self) -> dict:
        return {
            m: {
                "proposed": self.proposed[m],
                "accepted": self.accepted[m],
                "rate": self.accepted[m] / self.proposed[m] if self.proposed[m] else 0.0,
            }
            for m in ("birth", "death", "update")
        }


def per_sample_labels(tau: Sequence[int], labels: Sequence[int], n: int) -> np.ndarray:
    """Class label of every time index ``1..N``; ``x_1`` belongs to segment 0."""
    bounds = np.asarray((0,) + tuple(tau) + (n,))
    return np.repeat(np.asarray(labels, dtype=np.int64), np.diff(bounds))


@dataclass(eq=False)
class PosteriorSummary:
    """Posterior summaries from retained samples.

    ``cp_marginal[t - 1]`` is the probability that ``t`` is a change point;
    ``co_cluster[s, t]`` the frequency with which samples ``s`` and ``t``
    sit in segments of the same class.  ``label_estimate`` holds the
    per-sample labels of the retained state whose co-clustering pattern is
    closest (Frobenius) to ``co_cluster``.
    """

    n: int
    n_samples: int
    cp_marginal: np.ndarray
    k_histogram: np.ndarray
    co_cluster: Optional[np.ndarray]
    map_tau: tuple
    map_labels: tuple
    map_log_post: float
    estimate_tau: tuple
    estimate_labels: tuple
    label_estimate: np.ndarray
    traces: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)

    @property
    def map_k(self) -> int:
        return len(self.map_tau)

    @property
    def k_mode(self) -> int:
        return int(np.argmax(self.k_histogram))


def _co_cluster_matrix(z: np.ndarray) -> np.ndarray:
    return (z[:, None] == z[None, :]).astype(float)


def summarize(samples, n: int, k_max: int, co_cluster: bool = True) -> PosteriorSummary:
    """Summaries of retained ``(tau, labels, log_post)`` samples."""
    samples = list(samples)
    if not samples:
        raise InvalidArgumentError("no retained samples to summarize")
    counts: Counter = Counter()
    best = None
    k_hist = np.zeros(k_max + 1)
    cp = np.zeros(n)
    for tau, labels, lp in samples:
        key = (tuple(tau), tuple(int(v) for v in compact_labels(labels)))
        counts[key] += 1
        k_hist[len(tau)] += 1
        if best is None or lp > best[1]:
            best = (key, lp)
    total = len(samples)
    for (tau, _), cnt in counts.items():
        if tau:
            cp[np.asarray(tau) - 1] += cnt
    cp /= total
    k_hist /= total

    states = list(counts)
    weights = np.array([counts[s] for s in states], dtype=float) / total
    zs = [per_sample_labels(t, lab, n) for t, lab in states]
    cc = None
    if co_cluster:
        cc = np.zeros((n, n))
        for z, w in zip(zs, weights):
            cc += w * _co_cluster_matrix(z)
        dists = [float(np.sum((_co_cluster_matrix(z) - cc) ** 2)) for z in zs]
        pick = int(np.argmin(dists))
    else:
        pick = int(np.argmax(weights))
    return PosteriorSummary(
        n=n,
        n_samples=total,
        cp_marginal=cp,
        k_histogram=k_hist,
        co_cluster=cc,
        map_tau=best[0][0],
        map_labels=best[0][1],
        map_log_post=float(best[1]),
        estimate_tau=states[pick][0],
        estimate_labels=states[pick][1],
        label_estimate=zs[pick],
    )


class ChangePointSampler:
    """One chain: exclusive state, one RNG stream, one posterior cache."""

    def __init__(self, x, hyper: Hyperparameters, mode: str = "dp", rng=None,
                 check_invariants: bool = False):
        if mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")
        series = x if isinstance(x, TimeSeries) else TimeSeries(x)
        series.check_order(hyper.d_model)
        self.x = series.samples
        self.n = series.n
        self.hyper = hyper.resolve(self.x)
        if self.hyper.k_max > self.n - 2:
            raise InvalidArgumentError(f"k_max={self.hyper.k_max} must be below N-1={self.n - 1}")
        self.mode = mode
        self.rng = make_rng(self.hyper.seed) if rng is None else rng
        self.ev = PosteriorEvaluator(self.x, self.hyper)
        self.moments = self.ev.moments
        self.stats = MoveStats()
        self.check_invariants = check_invariants
        self.state = self.initial_state()

    # -- state helpers -------------------------------------------------

    def segments(self, tau) -> list:
        b = (1,) + tuple(tau) + (self.n,)
        return list(zip(b[:-1], b[1:]))

    def log_post(self, tau, labels) -> float:
        return self.ev.log_posterior(tau, labels)

    def _fit_class(self, segments):
        """Ridge fit used to seed a class: ``(mean, Omega, residual variance)``."""
        h = self.hyper
        gtg, gty, yty, d = self.moments.pooled(segments)
        prec = gtg + np.eye(h.d_model) / h.delta
        mean = np.linalg.solve(prec, gty + h.lambda_phi / h.delta)
        rss = yty - 2.0 * float(mean @ gty) + float(mean @ gtg @ mean)
        s2 = max(rss / d, 1e-8 * h.gamma)
        return mean, h.omega.copy(), s2

    def initial_state(self) -> ChainState:
        labels = np.zeros(1, dtype=np.int64)
        mean, cov, s2 = self._fit_class(self.segments(()))
        classes = ClassParams(mean[None, :], cov[None], np.array([s2]))
        lp = self.log_post((), labels)
        return ChainState((), labels, mean[None, :].copy(), classes, 0, lp)

    def feasible_births(self, tau) -> np.ndarray:
        """Positions that keep both halves of the split segment at least ``l_min`` long."""
        l_min = self.hyper.l_min
        parts = [np.arange(a + l_min, b - l_min + 1) for a, b in self.segments(tau)]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def n_feasible_births(self, tau) -> int:
        l_min = self.hyper.l_min
        return int(sum(max(0, b - a - 2 * l_min + 1) for a, b in self.segments(tau)))

    # -- candidates ----------------------------------------------------

    def birth_candidate(self, tau, labels, p: int) -> Candidate:
        i = bisect.bisect_left(tau, p)
        v = int(max(labels)) + 1
        new_tau = tuple(tau[:i]) + (p,) + tuple(tau[i:])
        raw = np.concatenate([labels[:i], [v, v + 1], labels[i + 1:]]).astype(np.int64)
        origin = np.concatenate([np.arange(i), [-1, -1], np.arange(i + 1, len(labels))])
        return Candidate(new_tau, raw, origin.astype(np.int64), self.log_post(new_tau, raw))

    def death_candidate(self, tau, labels, j: int) -> Candidate:
        """Remove ``tau[j]`` (0-based): segments ``j`` and ``j+1`` merge."""
        v = int(max(labels)) + 1
        new_tau = tuple(tau[:j]) + tuple(tau[j + 1:])
        raw = np.concatenate([labels[:j], [v], labels[j + 2:]]).astype(np.int64)
        origin = np.concatenate([np.arange(j), [-1], np.arange(j + 2, len(labels))])
        return Candidate(new_tau, raw, origin.astype(np.int64), self.log_post(new_tau, raw))

    def log_birth_ratio(self, tau, labels, p: int, cur_lp: Optional[float] = None):
        """``(candidate, log r_birth)`` for inserting ``p``."""
        k = len(tau)
        cur = self.log_post(tau, labels) if cur_lp is None else cur_lp
        cand = self.birth_candidate(tau, labels, p)
        b = move_probabilities(k, self.hyper.k_max).b
        d = move_probabilities(k + 1, self.hyper.k_max).d
        s = self.n_feasible_births(tau)
        lr = cand.log_post - cur + math.log(d / (k + 1)) - math.log(b / s)
        return cand, lr

    def log_death_ratio(self, tau, labels, j: int, cur_lp: Optional[float] = None,
                        target_labels=None):
        """``(candidate, log r)`` for removing ``tau[j]``: the inverse of the reverse birth ratio.

        ``target_labels`` evaluates the ratio against a given labeling of
        the merged configuration instead of the fresh-label convention,
        which is how a birth and its exact reverse are compared.
        """
        k = len(tau)
        cur = self.log_post(tau, labels) if cur_lp is None else cur_lp
        cand = self.death_candidate(tau, labels, j)
        if target_labels is not None:
            raw = np.asarray(target_labels, dtype=np.int64)
            if raw.size != k:
                raise InvalidArgumentError(f"{raw.size} target labels for {k} segments")
            cand = Candidate(cand.tau, raw, cand.origin, self.log_post(cand.tau, raw))
        b = move_probabilities(k - 1, self.hyper.k_max).b
        d = move_probabilities(k, self.hyper.k_max).d
        s = self.n_feasible_births(cand.tau)
        lr = cand.log_post - cur + math.log(b / s) - math.log(d / k)
        return cand, lr

    # -- moves ---------------------------------------------------------

    def _accept(self, log_ratio: float) -> bool:
        return log_ratio >= 0 or self.rng.random() < math.exp(log_ratio)

    def propose_birth(self):
        st = self.state
        if st.k >= self.hyper.k_max:
            return None, -math.inf
        pos = self.feasible_births(st.tau)
        if pos.size == 0:
            return None, -math.inf
        p = int(pos[self.rng.integers(pos.size)])
        return self.log_birth_ratio(st.tau, st.labels, p, st.log_post)

    def propose_death(self):
        st = self.state
        if st.k == 0:
            return None, -math.inf
        j = int(self.rng.integers(st.k))
        return self.log_death_ratio(st.tau, st.labels, j, st.log_post)

    def birth(self) -> bool:
        cand, lr = self.propose_birth()
        ok = cand is not None and self._accept(lr)
        self.stats.record("birth", ok)
        if ok:
            self._apply(cand)
        return ok

    def death(self) -> bool:
        cand, lr = self.propose_death()
        ok = cand is not None and self._accept(lr)
        self.stats.record("death", ok)
        if ok:
            self._apply(cand)
        return ok

    def update(self) -> int:
        """Relocate every change point once, in random order.

        Each relocation removes the point (its two segments merge) and
        re-inserts a point drawn uniformly from the feasible positions of
        the reduced configuration.  The proposal is symmetric, so the
        acceptance ratio is the posterior ratio alone.  Returns the number
        of accepted relocations.
        """
        accepted = 0
        for point in [self.state.tau[i] for i in self.rng.permutation(self.state.k)]:
            st = self.state
            j = st.tau.index(point)
            merged = self.death_candidate(st.tau, st.labels, j)
            pos = self.feasible_births(merged.tau)
            p = int(pos[self.rng.integers(pos.size)])
            cand = self.birth_candidate(merged.tau, merged.raw_labels, p)
            cand.origin = np.where(cand.origin >= 0, merged.origin[np.maximum(cand.origin, 0)], -1)
            ok = self._accept(cand.log_post - st.log_post)
            self.stats.record("update", ok)
            if ok:
                self._apply(cand)
                accepted += 1
        return accepted

    def _apply(self, cand: Candidate) -> None:
        st = self.state
        labels = compact_labels(cand.raw_labels)
        segs = self.segments(cand.tau)
        v_old = st.classes.v
        means, covs, noise = [], [], []
        seen = {}
        for i, (raw, new) in enumerate(zip(cand.raw_labels, labels)):
            if new in seen:
                continue
            seen[new] = True
            if raw < v_old:
                means.append(st.classes.means[raw])
                covs.append(st.classes.covs[raw])
                noise.append(st.classes.noise_vars[raw])
            else:
                members = [segs[t] for t in np.flatnonzero(cand.raw_labels == raw)]
                m, c, s2 = self._fit_class(members)
                means.append(m)
                covs.append(c)
                noise.append(s2)
        classes = ClassParams(np.array(means), np.array(covs), np.array(noise))
        phi = np.empty((len(labels), self.hyper.d_model))
        for i, src in enumerate(cand.origin):
            phi[i] = st.phi[src] if src >= 0 else classes.means[labels[i]]
        self.state = ChainState(cand.tau, labels, phi, classes, st.iteration, cand.log_post)

    def mh_step(self) -> str:
        probs = move_probabilities(self.state.k, self.hyper.k_max)
        u = self.rng.random()
        if u < probs.b:
            self.birth()
            return "birth"
        if u < probs.b + probs.d:
            self.death()
            return "death"
        self.update()
        return "update"

    # -- nested Gibbs --------------------------------------------------

    def refresh_segment_params(self) -> None:
        st = self.state
        mom = [self.moments.segment(a, b) for a, b in self.segments(st.tau)]
        gtg = np.array([m[0] for m in mom])
        gty = np.array([m[1] for m in mom])
        cl, lab = st.classes, st.labels
        mu, cov = segment_params_posterior_batch(
            gtg, gty, cl.means[lab], cl.covs[lab], cl.noise_vars[lab]
        )
        st.phi = mvn_sample_batch(mu, cov, self.rng)

    def gibbs_sweep(self) -> None:
        st, h, rng = self.state, self.hyper, self.rng
        cl = st.classes
        mu, s = class_means_posterior_batch(st.phi, st.labels, cl.covs, cl.noise_vars, h)
        cl.means = mvn_sample_batch(mu, s, rng)
        dfs, scales = class_covs_posterior_batch(st.phi, st.labels, cl.means, h)
        cl.covs = inv_wishart_sample_batch(dfs, scales, rng)
        segs = self.segments(st.tau)
        shapes = np.empty(cl.v)
        rates = np.empty(cl.v)
        for v in range(cl.v):
            stat = self.ev.class_stat(tuple(segs[i] for i in np.flatnonzero(st.labels == v)))
            shapes[v], rates[v] = class_noise_var_posterior(stat, h)
        cl.noise_vars = inv_gamma_sample_batch(shapes, rates, rng)
        labels, classes = resample_labels(st.phi, st.labels, cl, h, rng)
        st.labels = labels
        st.classes = classes
        st.log_post = self.log_post(st.tau, labels)

    # -- driver --------------------------------------------------------

    def step(self) -> None:
        if self.mode == "dp":
            self.refresh_segment_params()
            for _ in range(self.hyper.nc_iter):
                self.gibbs_sweep()
        self.mh_step()
        self.state.iteration += 1
        if self.check_invariants:
            self.validate_state()

    def validate_state(self) -> None:
        st = self.state
        Segmentation(st.tau, self.n).validate(self.hyper.l_min, self.hyper.k_max)
        ClassAssignment(st.labels)
        if len(st.labels) != st.k + 1 or st.phi.shape != (st.k + 1, self.hyper.d_model):
            raise NumericalDomainError("state shape mismatch", payload=st.to_dict())
        if st.classes.v != int(st.labels.max()) + 1:
            raise NumericalDomainError("class parameters out of sync", payload=st.to_dict())
        if self.mode == "baseline" and st.classes.v != st.k + 1:
            raise NumericalDomainError("baseline labels not distinct", payload=st.to_dict())

    def run(self, n_iter: Optional[int] = None, progress=None) -> PosteriorSummary:
        h = self.hyper
        n_iter = h.n_iter if n_iter is None else n_iter
        n_burn = int(h.burn_in * n_iter)
        samples, k_trace, lp_trace = [], [], []
        for it in range(n_iter):
            try:
                self.step()
            except NumericalDomainError as exc:
                exc.payload = {"detail": exc.payload, "state": self.state.to_dict()}
                raise
            if it >= n_burn and (it - n_burn) % h.thin == 0:
                st = self.state
                samples.append((st.tau, tuple(int(v) for v in st.labels), st.log_post))
                k_trace.append(st.k)
                lp_trace.append(st.log_post)
            if progress is not None:
                progress(it)
        if not samples:
            st = self.state
            samples.append((st.tau, tuple(int(v) for v in st.labels), st.log_post))
            k_trace.append(st.k)
            lp_trace.append(st.log_post)
        summary = summarize(samples, self.n, h.k_max, co_cluster=True)
        summary.traces = {"k": np.asarray(k_trace), "log_post": np.asarray(lp_trace)}
        summary.acceptance = self.stats.as_dict()
        summary.samples = samples
        return summary


def run_chain(x, hyper: Hyperparameters, mode: str = "dp", rng=None,
              n_iter: Optional[int] = None) -> PosteriorSummary:
    """Run one chain and summarize the post-burn-in samples."""
    return ChangePointSampler(x, hyper, mode, rng).run(n_iter)
