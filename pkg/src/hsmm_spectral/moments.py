"""Observation schedules and co-occurrence moment tensors.

An :class:`ObservationSchedule` fixes which symbols around an anchor position
enter the left and right observation windows.  The right window of anchor
``s`` (0-based) sits at absolute positions ``s + 1 + offset`` for each right
offset; the left window mirrors it at ``s - 1 - offset``, equivalently
``s - n_d + lam`` for the reflected ``lam`` offsets.  Composite window
indices are flattened row-major over positions in ascending order (earliest
position is the slowest digit, base ``n_o``).

Moment tensors are averaged placement frequencies, so each sums to one.  The
three windowed tensors pool one *common* anchor set (anchors where the
aligned, shifted and symbol-augmented placements all fit); this keeps their
left factors identical, which the downstream pseudo-inverse cancellation
needs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hsmm import (
    HsmmParams,
    InvalidModel,
    duration_update_matrix,
    initial_joint,
    joint_transition_matrix,
    next_state_table,
    state_update_matrix,
    validate,
)
from .tensors import ModeLabel, NamedTensor

OL = ModeLabel("ol")
OR = ModeLabel("or")
SYM = ModeLabel("sym", 0)
SYM2 = ModeLabel("sym", 1)
XD = ModeLabel("xd")


class InsufficientData(Exception):
    """No sequence can host a single placement of the required windows."""

    def __init__(self, message: str, min_length: int):
        super().__init__(message)
        self.min_length = min_length


@dataclass(frozen=True)
class ObservationSchedule:
    """Index sets of the left/right observation windows.

    ``right_offsets`` are the distinct values of
    ``max(0, (n_d - 1) - (n_x**i - 1))`` for ``i = 0 .. ell - 1`` (sorted
    ascending); gaps between scheduled positions grow geometrically in
    ``n_x`` so that ``ell`` stays logarithmic in ``n_d``.  For ``n_x == 1``
    the geometric rule degenerates and the window falls back to ``n_d``
    consecutive positions.
    """

    n_x: int
    n_d: int
    ell: int
    right_offsets: tuple[int, ...]
    left_offsets: tuple[int, ...]

    @property
    def span(self) -> int:
        return self.n_d

    @property
    def joint_rank(self) -> int:
        """Generic rank of the windowed moment matrix.

        With a single hidden state the emissions are independent of the
        duration counter, every window factor collapses to an outer
        product, and the representation is rank one.
        """
        return self.n_x * self.n_d if self.n_x > 1 else 1

    @property
    def min_sequence_length(self) -> int:
        """Shortest sequence hosting one common-anchor placement."""
        return 2 * self.n_d + 2

    def anchor_range(self, T: int) -> range:
        """Anchors (0-based) where aligned and shifted placements all fit."""
        return range(self.n_d, T - self.n_d - 1)

    def right_positions(self, anchor: int) -> np.ndarray:
        return anchor + 1 + np.asarray(self.right_offsets)

    def left_positions(self, anchor: int) -> np.ndarray:
        return anchor - self.n_d + np.asarray(self.left_offsets)

    def start_positions(self) -> np.ndarray:
        """Right-window positions of the boundary tensor (anchor 1)."""
        return 2 + np.asarray(self.right_offsets)

    @property
    def start_min_length(self) -> int:
        return self.n_d + 2


def build_schedule(n_x: int, n_d: int) -> ObservationSchedule:
    """Construct the window schedule for given state and duration sizes."""
    if n_x < 1 or n_d < 1:
        raise InvalidModel("n_x and n_d must be positive")
    if n_x == 1:
        offsets = tuple(range(n_d))
    else:
        # smallest ell with n_x**(ell - 1) >= n_d, in exact integer arithmetic
        ell = 1
        while n_x ** (ell - 1) < n_d:
            ell += 1
        raw = [max(0, (n_d - 1) - (n_x**i - 1)) for i in range(ell)]
        offsets = tuple(sorted(set(raw)))
    span = n_d
    left = tuple(sorted(span - 1 - o for o in offsets))
    return ObservationSchedule(
        n_x=n_x,
        n_d=n_d,
        ell=len(offsets),
        right_offsets=offsets,
        left_offsets=left,
    )


@dataclass(frozen=True)
class MomentSet:
    """Averaged co-occurrence tensors over scheduled windows.

    ``m_lr`` couples the left and right windows of the same anchor,
    ``m_lr_shift`` shifts the right window one anchor forward, ``m_lro``
    adds the anchor's own symbol, ``m_oo`` pools all adjacent symbol pairs,
    and ``m_start`` is the boundary joint of the first two symbols with the
    right window anchored at position 1.
    """

    m_lr: NamedTensor
    m_lr_shift: NamedTensor
    m_lro: NamedTensor
    m_oo: NamedTensor
    m_start: NamedTensor
    n_o: int
    schedule: ObservationSchedule
    window_count: int
    pair_count: int
    start_count: int


@dataclass(frozen=True)
class AnalyticFactorContext:
    """Population factors behind the analytic moments.

    ``f_right`` is the conditional table of the right window given the
    anchor's state and the previous step's duration counter; ``f_left`` is
    the pooled left-window conditional on the same pair; ``k_marginals``
    holds that pair's marginal for every pooled anchor.
    """

    f_right: NamedTensor
    f_left: NamedTensor
    k_marginals: tuple[NamedTensor, ...]


def _codes(seq: np.ndarray, positions: np.ndarray, n_o: int) -> np.ndarray:
    """Row-major composite codes of ``seq`` gathered at ``positions``.

    ``positions`` has shape (anchors, window); ascending position order maps
    to most-significant-first digits.
    """
    ell = positions.shape[1]
    powers = n_o ** np.arange(ell - 1, -1, -1)
    return seq[positions] @ powers


def estimate_moments(
    sequences: Sequence[np.ndarray], n_o: int, sched: ObservationSchedule
) -> MomentSet:
    """Count scheduled co-occurrences across all sequences and average.

    Raises :class:`InsufficientData` when no sequence is long enough to host
    a single common-anchor placement.
    """
    k = n_o**sched.ell
    lr = np.zeros((k, k))
    lr_shift = np.zeros((k, k))
    lro = np.zeros((k, k, n_o))
    oo = np.zeros((n_o, n_o))
    start = np.zeros((n_o, n_o, k))
    window_count = 0
    pair_count = 0
    start_count = 0
    r_off = np.asarray(sched.right_offsets)
    l_off = np.asarray(sched.left_offsets)
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.int64)
        T = seq.shape[0]
        if T >= 2:
            np.add.at(oo, (seq[:-1], seq[1:]), 1.0)
            pair_count += T - 1
        if T >= sched.start_min_length:
            code = int(_codes(seq, (2 + r_off)[None, :], n_o)[0])
            start[seq[0], seq[1], code] += 1.0
            start_count += 1
        anchors = np.arange(sched.n_d, T - sched.n_d - 1)
        if anchors.size == 0:
            continue
        left = _codes(seq, anchors[:, None] - sched.n_d + l_off[None, :], n_o)
        right = _codes(seq, anchors[:, None] + 1 + r_off[None, :], n_o)
        right_next = _codes(seq, anchors[:, None] + 2 + r_off[None, :], n_o)
        np.add.at(lr, (left, right), 1.0)
        np.add.at(lr_shift, (left, right_next), 1.0)
        np.add.at(lro, (left, right, seq[anchors]), 1.0)
        window_count += anchors.size
    if window_count == 0:
        raise InsufficientData(
            f"no sequence hosts a full window placement; need length >= "
            f"{sched.min_sequence_length}",
            sched.min_sequence_length,
        )
    return MomentSet(
        m_lr=NamedTensor(lr / window_count, [OL, OR]),
        m_lr_shift=NamedTensor(lr_shift / window_count, [OL, OR]),
        m_lro=NamedTensor(lro / window_count, [OL, OR, SYM]),
        m_oo=NamedTensor(oo / pair_count, [SYM, SYM2]),
        m_start=NamedTensor(
            start / start_count if start_count else start, [SYM, SYM2, OR]
        ),
        n_o=n_o,
        schedule=sched,
        window_count=window_count,
        pair_count=pair_count,
        start_count=start_count,
    )


def merge_moment_sets(parts: Sequence[MomentSet]) -> MomentSet:
    """Combine per-worker moment sets by count-weighted averaging."""
    if not parts:
        raise InsufficientData("nothing to merge", 0)
    ref = parts[0]

    def combine(field: str, count_field: str) -> np.ndarray:
        total = sum(getattr(p, count_field) for p in parts)
        acc = sum(
            getattr(p, field).data * getattr(p, count_field) for p in parts
        )
        return acc / total if total else acc

    return MomentSet(
        m_lr=NamedTensor(combine("m_lr", "window_count"), [OL, OR]),
        m_lr_shift=NamedTensor(combine("m_lr_shift", "window_count"), [OL, OR]),
        m_lro=NamedTensor(combine("m_lro", "window_count"), [OL, OR, SYM]),
        m_oo=NamedTensor(combine("m_oo", "pair_count"), [SYM, SYM2]),
        m_start=NamedTensor(combine("m_start", "start_count"), [SYM, SYM2, OR]),
        n_o=ref.n_o,
        schedule=ref.schedule,
        window_count=sum(p.window_count for p in parts),
        pair_count=sum(p.pair_count for p in parts),
        start_count=sum(p.start_count for p in parts),
    )


# ---------------------------------------------------------------------------
# analytic (population) moments


def window_conditional(
    p: HsmmParams, offsets: Sequence[int], n_o: int | None = None
) -> np.ndarray:
    """Conditional table of scheduled observations given a joint state.

    Entry ``[w, (x, d)]`` is the probability that the symbols at relative
    positions ``1 + offset`` (for each offset, ascending) spell the
    composite code ``w``, given the chain sits at ``(x, d)`` at relative
    position 0.  Computed by forward marginalization, emitting only at
    scheduled positions.
    """
    offsets = sorted(set(int(o) for o in offsets))
    V = joint_transition_matrix(p)
    em = np.concatenate([p.O] * p.n_d, axis=1)  # [symbol, (x, d)]
    S = p.n_joint
    b = np.eye(S)[None, :, :]  # [prefix, current, root]
    scheduled = set(offsets)
    for step in range(1, offsets[-1] + 2):
        b = np.einsum("ts,psr->ptr", V, b)
        if step - 1 in scheduled:
            pref, _, _ = b.shape
            b = np.einsum("psr,os->posr", b, em).reshape(pref * p.n_o, S, S)
    return b.sum(axis=1)


def _left_joint(
    p: HsmmParams,
    sched: ObservationSchedule,
    k_start: np.ndarray,
) -> np.ndarray:
    """Joint table of the left window with the anchor's (state, prev-duration).

    ``k_start`` is the (possibly anchor-averaged) marginal of the pair at the
    window's first position.  Returns ``[w, (x, d_prev)]``.
    """
    V = joint_transition_matrix(p)
    XL = state_update_matrix(p)
    em = np.concatenate([p.O] * p.n_d, axis=1)
    a = k_start[None, :].copy()  # [prefix, (x, d)]
    scheduled = set(sched.left_offsets)
    for rel in range(p.n_d):
        if rel in scheduled:
            pref = a.shape[0]
            a = np.einsum("ps,os->pos", a, em).reshape(pref * p.n_o, p.n_joint)
        if rel < p.n_d - 1:
            a = a @ V.T
    return a @ XL.T  # half-step: pair (x_{s-1}, d_{s-1}) -> (x_s, d_{s-1})


def analytic_moments(
    p: HsmmParams,
    sched: ObservationSchedule,
    T: int,
    anchors: Sequence[int] | None = None,
) -> tuple[MomentSet, AnalyticFactorContext]:
    """Population limits of :func:`estimate_moments` over a length-``T`` horizon.

    ``anchors`` restricts the pooled anchor set (defaults to every anchor a
    length-``T`` sequence admits).  The returned context exposes the factor
    tables behind the construction.
    """
    report = validate(p)
    if not report.ok:
        raise InvalidModel("model fails validation:\n" + str(report))
    if anchors is None:
        anchors = list(sched.anchor_range(T))
    anchors = sorted(int(a) for a in anchors)
    if not anchors:
        raise InsufficientData(
            f"horizon T={T} admits no anchor; need T >= {sched.min_sequence_length}",
            sched.min_sequence_length,
        )
    if anchors[0] < sched.n_d or anchors[-1] >= T - sched.n_d - 1:
        raise InvalidModel(f"anchor set {anchors[:3]}.. outside the valid range")

    V = joint_transition_matrix(p)
    W = duration_update_matrix(p)
    XL = state_update_matrix(p)
    T0 = next_state_table(p)
    em = np.concatenate([p.O] * p.n_d, axis=1)
    S = p.n_joint

    # marginals k[t] of the same-time pair, t = 0 .. T-2
    ks = np.empty((T - 1, S))
    ks[0] = initial_joint(p)
    for t in range(1, T - 1):
        ks[t] = V @ ks[t - 1]

    f_next = window_conditional(p, sched.right_offsets)
    f_mid = f_next @ W
    f_right = f_next @ V

    k_start = ks[[a - sched.n_d for a in anchors]].mean(axis=0)
    left = _left_joint(p, sched, k_start)

    m_lr = left @ f_mid.T
    m_lr_shift = left @ (f_right @ W).T
    m_lro = np.einsum("ls,os,rs->lro", left, em, f_mid)

    pair_joint = np.zeros((p.n_x, p.n_x))  # [next, current]
    for t in range(T - 1):
        pair_joint += (T0 * ks[t][None, :]).reshape(p.n_x, p.n_d, p.n_x).sum(axis=1)
    pair_joint /= T - 1
    m_oo = p.O @ pair_joint.T @ p.O.T

    # boundary joint p(o_0, o_1, right window of anchor 1)
    phi2 = XL @ (ks[0][:, None] * em.T)  # [(x, d_prev=d_0), o_0]
    m_start = np.einsum("sa,os,rs->aor", phi2, em, f_mid)

    k_marginals = tuple(
        NamedTensor(XL @ ks[a - 1], [XD]) for a in anchors
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        cols = left.sum(axis=0)
        f_left = np.where(cols[None, :] > 0, left / cols[None, :], 0.0)
    context = AnalyticFactorContext(
        f_right=NamedTensor(f_mid, [OR, XD]),
        f_left=NamedTensor(f_left, [OL, XD]),
        k_marginals=k_marginals,
    )
    moments = MomentSet(
        m_lr=NamedTensor(m_lr, [OL, OR]),
        m_lr_shift=NamedTensor(m_lr_shift, [OL, OR]),
        m_lro=NamedTensor(m_lro, [OL, OR, SYM]),
        m_oo=NamedTensor(m_oo, [SYM, SYM2]),
        m_start=NamedTensor(m_start, [SYM, SYM2, OR]),
        n_o=p.n_o,
        schedule=sched,
        window_count=len(anchors),
        pair_count=T - 1,
        start_count=1,
    )
    return moments, context
