"""Continuous-density HMMs with Gaussian-mixture emissions.

Supports ergodic and left-right transition topologies, scaled forward
scoring, and Baum-Welch training over one or more observation sequences.
A single-state model is exactly a GMM: its forward log-likelihood equals
gmm_score of the emission.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import gmm as gmm_mod
from .errors import (
    DegenerateState,
    DimensionMismatch,
    EmptyFeatures,
    ImpossibleObservation,
    IndivisibleComponents,
    TooFewFrames,
)
from .features import FeatureMatrix
from .gmm import EmConfig, GmmParams, component_log_densities
from .util import derive_seed

ERGODIC = "ergodic"
LEFT_RIGHT = "left_right"

STATE_OCCUPANCY_FLOOR = 1e-6   # fraction of frames below which a state freezes
_EMISSION_NS = 0x1A            # seed namespace for per-state emission init


@dataclass(frozen=True)
class Topology:
    kind: str = ERGODIC

    def __post_init__(self):
        if self.kind not in (ERGODIC, LEFT_RIGHT):
            raise ValueError(f"unknown topology {self.kind!r}")

    def mask(self, num_states):
        """Boolean matrix of allowed transitions."""
        if self.kind == ERGODIC:
            return np.ones((num_states, num_states), dtype=bool)
        return np.triu(np.ones((num_states, num_states), dtype=bool))


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Row-stochastic transitions, initial distribution, per-state GMMs."""

    transitions: np.ndarray        # (N, N)
    initial: np.ndarray            # (N,)
    emissions: tuple               # N GmmParams with equal dim
    topology: Topology = field(default_factory=Topology)

    def __post_init__(self):
        object.__setattr__(
            self, "transitions", np.asarray(self.transitions, dtype=np.float64)
        )
        object.__setattr__(
            self, "initial", np.asarray(self.initial, dtype=np.float64)
        )
        object.__setattr__(self, "emissions", tuple(self.emissions))
        n = len(self.emissions)
        if self.transitions.shape != (n, n):
            raise ValueError("transition matrix shape must match state count")
        if len(self.initial) != n:
            raise ValueError("initial distribution length must match state count")
        if np.any(self.transitions < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if np.max(np.abs(self.transitions.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("every transition row must sum to 1 within 1e-12")
        if abs(float(self.initial.sum()) - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1 within 1e-12")
        dims = {e.dim for e in self.emissions}
        if len(dims) != 1:
            raise ValueError("all emissions must share one dimension")
        allowed = self.topology.mask(n)
        if np.any(self.transitions[~allowed] != 0.0):
            raise ValueError("masked transitions must be exactly 0")

    @property
    def num_states(self):
        return len(self.emissions)

    @property
    def dim(self):
        return self.emissions[0].dim

    @property
    def total_components(self):
        return sum(e.num_components for e in self.emissions)


def emission_seed(seed, state_index):
    """Documented derivation of the per-state emission init seed."""
    return derive_seed(seed, _EMISSION_NS, state_index)


def _pool(X_list):
    mats = [X.rows if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64) for X in X_list]
    if not mats:
        raise EmptyFeatures("need at least one observation sequence")
    return mats, np.concatenate(mats, axis=0)


def init_hmm(X_list, num_states, total_components, topology, seed,
             variance_floor_factor=1e-4):
    """Initial model: k-means partition of the pooled frames into states.

    Each state's emission is a kmeans_init plus a single EM pass over its
    cluster, with total_components / num_states components. Transitions
    start uniform over the allowed entries; the initial distribution is
    uniform for ergodic models and concentrated on state 0 for left-right.
    """
    if total_components % num_states != 0:
        raise IndivisibleComponents(
            f"{total_components} components do not divide over {num_states} states"
        )
    per_state = total_components // num_states
    mats, pooled = _pool(X_list)
    if pooled.shape[0] < total_components:
        raise TooFewFrames(
            f"{pooled.shape[0]} frames < {total_components} total components"
        )

    if num_states == 1:
        clusters = [pooled]
    else:
        rng = np.random.default_rng(derive_seed(seed, _EMISSION_NS, 0x5B))
        _, assign = gmm_mod.lloyd_partition(pooled, num_states, rng)
        clusters = [pooled[assign == j] for j in range(num_states)]

    emissions = []
    for j, cluster in enumerate(clusters):
        cfg = EmConfig(
            max_iters=1,
            rel_tol=1e-12,
            variance_floor_factor=variance_floor_factor,
            seed=emission_seed(seed, j),
        )
        params, _ = gmm_mod.em_fit(cluster, per_state, cfg)
        emissions.append(params)

    mask = topology.mask(num_states)
    transitions = mask / mask.sum(axis=1, keepdims=True)
    if topology.kind == LEFT_RIGHT:
        initial = np.zeros(num_states)
        initial[0] = 1.0
    else:
        initial = np.full(num_states, 1.0 / num_states)
    return HmmParams(
        transitions=transitions,
        initial=initial,
        emissions=emissions,
        topology=topology,
    )


def _state_log_densities(hmm, rows):
    """T x N matrix of per-state emission log densities."""
    cols = []
    for emission in hmm.emissions:
        comp = component_log_densities(emission, rows)
        shift = np.max(comp, axis=1, keepdims=True)
        cols.append(shift[:, 0] + np.log(np.sum(np.exp(comp - shift), axis=1)))
    return np.stack(cols, axis=1)


def _scaled_forward(hmm, log_b):
    """Scaled forward pass. Returns (alpha_hat, log_c, shift) where
    log P(O) = sum(log_c + shift)."""
    T, N = log_b.shape
    alpha = np.empty((T, N))
    log_c = np.empty(T)
    shift = log_b.max(axis=1)
    if not np.all(np.isfinite(shift)):
        raise ImpossibleObservation("emission density underflowed to zero")
    b = np.exp(log_b - shift[:, None])

    u = hmm.initial * b[0]
    total = u.sum()
    if total <= 0.0:
        raise ImpossibleObservation("zero total probability at step 0")
    alpha[0] = u / total
    log_c[0] = np.log(total)
    for t in range(1, T):
        u = (alpha[t - 1] @ hmm.transitions) * b[t]
        total = u.sum()
        if total <= 0.0:
            raise ImpossibleObservation(f"zero total probability at step {t}")
        alpha[t] = u / total
        log_c[t] = np.log(total)
    return alpha, log_c, shift


def forward_loglik(hmm, X):
    """log P(O | model) by the scaled forward recursion."""
    rows = X.rows if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyFeatures("need a nonempty T x D observation matrix")
    if rows.shape[1] != hmm.dim:
        raise DimensionMismatch(
            f"observation dim {rows.shape[1]} != model dim {hmm.dim}"
        )
    _, log_c, shift = _scaled_forward(hmm, _state_log_densities(hmm, rows))
    return float(np.sum(log_c + shift))


def _scaled_backward(hmm, b, scales):
    """Backward pass matching the forward scaling (scales = exp(log_c))."""
    T, N = b.shape
    beta = np.empty((T, N))
    beta[T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (hmm.transitions @ (b[t + 1] * beta[t + 1])) / scales[t + 1]
    return beta


@dataclass
class BaumWelchTrace:
    """Per-iteration log-likelihoods plus any (iteration, state) freezes."""

    log_likelihoods: list = field(default_factory=list)
    frozen_states: list = field(default_factory=list)


def _utterance_stats(hmm, rows):
    """E-step statistics for one utterance.

    Returns (ll, gamma_first, xi_sum, gamma_total, mix_stats) where
    mix_stats[j] is the (T x M_j) state-and-mixture occupancy for state j.
    """
    log_b = _state_log_densities(hmm, rows)
    alpha, log_c, shift = _scaled_forward(hmm, log_b)
    b = np.exp(log_b - shift[:, None])
    scales = np.exp(log_c)
    beta = _scaled_backward(hmm, b, scales)

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    T = rows.shape[0]
    xi_sum = np.zeros_like(hmm.transitions)
    for t in range(T - 1):
        xi = (
            alpha[t][:, None]
            * hmm.transitions
            * (b[t + 1] * beta[t + 1])[None, :]
            / scales[t + 1]
        )
        xi_sum += xi

    mix = []
    for j, emission in enumerate(hmm.emissions):
        comp = component_log_densities(emission, rows)
        cshift = np.max(comp, axis=1, keepdims=True)
        post = np.exp(comp - cshift)
        post /= post.sum(axis=1, keepdims=True)
        mix.append(gamma[:, j : j + 1] * post)
    return float(np.sum(log_c + shift)), gamma[0], xi_sum, gamma, mix


def baum_welch_fit(X_list, num_states, total_components, topology, cfg):
    """Baum-Welch training from init_hmm, accumulating statistics over all
    utterances before each M-step.

    Returns (params, trace). trace.log_likelihoods[k] is the total
    log-likelihood after k M-steps; states whose occupancy drops below
    1e-6 of the frame mass keep their emission for that iteration and are
    recorded in trace.frozen_states.
    """
    hmm = init_hmm(
        X_list, num_states, total_components, topology, cfg.seed,
        variance_floor_factor=cfg.variance_floor_factor,
    )
    mats, pooled = _pool(X_list)
    floor = gmm_mod.variance_floor(pooled, cfg.variance_floor_factor)
    total_frames = pooled.shape[0]
    mask = topology.mask(num_states)

    trace = BaumWelchTrace()
    for iteration in range(cfg.max_iters):
        ll = 0.0
        pi_acc = np.zeros(num_states)
        xi_acc = np.zeros((num_states, num_states))
        gamma_trans_acc = np.zeros(num_states)   # occupancy over t < T-1
        gamma_acc = np.zeros(num_states)
        mix_occ = [np.zeros(e.num_components) for e in hmm.emissions]
        mix_x = [np.zeros((e.num_components, hmm.dim)) for e in hmm.emissions]
        per_utt_mix = []

        for rows_full in mats:
            utt_ll, gamma1, xi_sum, gamma, mix = _utterance_stats(hmm, rows_full)
            ll += utt_ll
            pi_acc += gamma1
            xi_acc += xi_sum
            gamma_trans_acc += gamma[:-1].sum(axis=0)
            gamma_acc += gamma.sum(axis=0)
            for j in range(num_states):
                mix_occ[j] += mix[j].sum(axis=0)
                mix_x[j] += mix[j].T @ rows_full
            per_utt_mix.append(mix)

        trace.log_likelihoods.append(ll)
        if (
            len(trace.log_likelihoods) >= 2
            and trace.log_likelihoods[-1] - trace.log_likelihoods[-2]
            < cfg.rel_tol * abs(trace.log_likelihoods[-2])
        ):
            return hmm, trace

        # M-step
        initial = pi_acc / pi_acc.sum()
        transitions = np.array(hmm.transitions)
        for i in range(num_states):
            if gamma_trans_acc[i] > 0 and xi_acc[i].sum() > 0:
                row = np.where(mask[i], xi_acc[i], 0.0)
                transitions[i] = row / row.sum()

        emissions = []
        for j, emission in enumerate(hmm.emissions):
            occupancy = float(gamma_acc[j])
            if occupancy < STATE_OCCUPANCY_FLOOR * total_frames:
                warnings.warn(
                    f"state {j} starved at iteration {iteration}; emission frozen",
                    DegenerateState,
                )
                trace.frozen_states.append((iteration, j))
                emissions.append(emission)
                continue
            occ = np.maximum(mix_occ[j], 0.0)
            safe = np.where(occ > 0, occ, 1.0)
            means = mix_x[j] / safe[:, None]
            second = np.zeros_like(means)
            for rows_full, mix in zip(mats, per_utt_mix):
                diff = rows_full[:, None, :] - means[None, :, :]
                second += np.einsum("tm,tmd->md", mix[j], diff * diff)
            variances = np.maximum(second / safe[:, None], floor)
            dead = occ == 0
            if np.any(dead):
                means[dead] = emission.means[dead]
                variances[dead] = emission.variances[dead]
            weights = occ / occ.sum()
            emissions.append(
                GmmParams(weights=weights, means=means, variances=variances)
            )

        hmm = HmmParams(
            transitions=transitions,
            initial=initial,
            emissions=emissions,
            topology=topology,
        )
    return hmm, trace
