"""Observable-representation learning and sequence-probability inference.

The learned model re-expresses the latent-chain likelihood through tensors
of observable co-occurrences only:

* ``d_tilde`` transfers a right-window message one anchor forward,
* ``x_tilde`` consumes the anchor's own symbol while re-emitting the window
  (a three-mode tensor: inverse-side window, data-side window, symbol),
* ``o_tilde`` is the symbol-pair table times its own pseudo-inverse (a
  projector onto the reachable emission subspace),
* ``start_factor`` is the boundary joint of the first two symbols with the
  first right window, estimable directly as a probability table,
* ``end_factor`` is ``x_tilde`` with its data-side window marginalized out,
  closing the chain at the final symbol.

With population moments the chained product reproduces the exact sequence
likelihood; with finite samples it is a consistent estimator whose values
may leave [0, 1], so results carry a sign and a log magnitude.

The pseudo-inverse products are evaluated with compensated (double-double)
arithmetic on the retained rank space: the conditioning of the windowed
moment matrix is the product of two factor conditionings and routinely
exceeds what plain float64 can invert to the accuracy the estimator is
tested at.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _dd
from .container import read_container, write_container
from .moments import OL, OR, SYM, SYM2, MomentSet, ObservationSchedule, estimate_moments
from .tensors import ModeLabel, NamedTensor, RankZero, numerical_rank

OR_IN = ModeLabel("or_in")


class SpectralError(Exception):
    """Base class for spectral-layer errors."""


class DegenerateMoments(SpectralError):
    """A moment tensor lacks the rank the representation needs."""

    def __init__(self, tensor: str, anchor: int | None = None, detail: str = ""):
        loc = f" at anchor {anchor}" if anchor is not None else ""
        super().__init__(f"degenerate moment tensor {tensor}{loc}: {detail}")
        self.tensor = tensor
        self.anchor = anchor


class SequenceTooShort(SpectralError):
    """Inference needs at least three symbols."""


class UnknownSymbol(SpectralError):
    """A test symbol falls outside the model's alphabet."""


@dataclass(frozen=True)
class BuildStats:
    """Operation counts of one learning pass (independent of data length)."""

    pinv_ops: int
    contraction_ops: int


@dataclass(frozen=True)
class ObservableModel:
    d_tilde: NamedTensor
    x_tilde: NamedTensor
    o_tilde: NamedTensor
    start_factor: NamedTensor
    end_factor: NamedTensor
    pinv_rtol: float
    n_o: int
    ell: int
    variant: str = "batched"
    anchor: int | None = None
    build_stats: BuildStats | None = None


def _pinv_product(
    a: np.ndarray,
    rhs: Sequence[np.ndarray],
    rtol: float,
    max_rank: int | None = None,
):
    """Apply the truncated Moore-Penrose inverse of ``a`` to each ``rhs``.

    Singular values at or below ``rtol * sigma_max`` are truncated, and at
    most ``max_rank`` directions are kept (the moment matrices have a known
    population rank; anything beyond it is sampling noise that the chain
    would amplify).  The retained singular subspaces are refined with
    compensated subspace iteration and the rank-space system is solved with
    compensated residuals, so the result stays accurate even when the kept
    spectrum spans ten or more orders of magnitude.
    """
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise RankZero("zero matrix has no usable pseudo-inverse")
    r = int(np.count_nonzero(s > rtol * s[0]))
    if max_rank is not None:
        r = min(r, max_rank)
    if r == 0:
        raise RankZero("all singular values truncated")
    ah, al = _dd.dd_from(a)
    ath, atl = ah.T.copy(), al.T.copy()
    vh, vl = _dd.dd_mgs(*_dd.dd_matmul(ath, atl, *_dd.dd_from(u[:, :r])))
    uh, ul = _dd.dd_mgs(*_dd.dd_matmul(ah, al, vh, vl))
    vh, vl = _dd.dd_mgs(*_dd.dd_matmul(ath, atl, uh, ul))
    avh, avl = _dd.dd_matmul(ah, al, vh, vl)
    mh, ml = _dd.dd_matmul(uh.T, ul.T, avh, avl)
    outs = []
    for r_mat in rhs:
        rh, rl = _dd.dd_matmul(uh.T, ul.T, *_dd.dd_from(r_mat))
        x = _dd.refined_solve(mh, ml, rh, rl)
        xh, xl = _dd.dd_matmul(vh, vl, *_dd.dd_from(x))
        outs.append(xh + xl)
    return outs


def _noise_rtol(a: np.ndarray, count: int) -> float:
    """Relative truncation level matching the sampling noise of a count table.

    The table sums to one, so the Frobenius norm of its sampling error is
    about ``1/sqrt(count)``; directions below a small multiple of that are
    unresolved and only amplify noise when inverted.
    """
    s_max = float(np.linalg.norm(a, 2))
    if s_max == 0.0 or count <= 0:
        return 0.0
    return 2.0 / math.sqrt(count) / s_max


def build_observable(
    m: MomentSet, rtol: float, noise_floor: bool = False
) -> ObservableModel:
    """Learn the observable tensors from a pooled moment set.

    The windowed moment matrix must carry the full joint-state rank of the
    schedule at ``rtol``, otherwise the inversion cannot expose every latent
    direction and :class:`DegenerateMoments` is raised.  With
    ``noise_floor`` set (finite-sample estimation), truncation additionally
    drops directions below the sampling-noise level of the counts; the
    representation then degrades gracefully to a lower rank instead of
    amplifying unresolved directions.
    """
    sched = m.schedule
    k = m.n_o**sched.ell
    needed = min(sched.joint_rank, k)
    a = m.m_lr.data
    if numerical_rank(a, rtol) < needed:
        raise DegenerateMoments(
            "m_lr", detail=f"rank {numerical_rank(a, rtol)} < {needed} at rtol {rtol}"
        )
    eff_lr = max(rtol, _noise_rtol(a, m.window_count)) if noise_floor else rtol
    eff_oo = (
        max(rtol, _noise_rtol(m.m_oo.data, m.pair_count)) if noise_floor else rtol
    )
    try:
        d_mat, x_flat = _pinv_product(
            a,
            [m.m_lr_shift.data, m.m_lro.data.reshape(k, k * m.n_o)],
            eff_lr,
            max_rank=needed,
        )
    except RankZero as exc:
        raise DegenerateMoments("m_lr", detail=str(exc)) from None
    try:
        (o_mat,) = _pinv_product(
            m.m_oo.data.T, [m.m_oo.data.T], eff_oo, max_rank=sched.n_x
        )
    except RankZero as exc:
        raise DegenerateMoments("m_oo", detail=str(exc)) from None
    x_cube = x_flat.reshape(k, k, m.n_o)
    return ObservableModel(
        d_tilde=NamedTensor(d_mat, [OR_IN, OR]),
        x_tilde=NamedTensor(x_cube, [OR_IN, OR, SYM]),
        o_tilde=NamedTensor(o_mat, [SYM, SYM2]),
        start_factor=m.m_start,
        end_factor=NamedTensor(x_cube.sum(axis=1), [OR_IN, SYM]),
        pinv_rtol=rtol,
        n_o=m.n_o,
        ell=sched.ell,
        variant="batched",
        build_stats=BuildStats(pinv_ops=2, contraction_ops=3),
    )


def build_observable_per_t(
    sequences: Sequence[np.ndarray],
    n_o: int,
    sched: ObservationSchedule,
    rtol: float,
    noise_floor: bool = False,
) -> list[ObservableModel]:
    """Per-anchor variant: one tensor triple per anchor, no pooling.

    All sequences must share one length; each anchor's tensors are estimated
    from that anchor's placements only (one per sequence), so they are far
    noisier than the pooled build at equal data size.
    """
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs:
        raise DegenerateMoments("m_lr", detail="no sequences")
    T = seqs[0].shape[0]
    if any(s.shape[0] != T for s in seqs):
        raise DegenerateMoments(
            "m_lr", detail="per-anchor estimation needs equal-length sequences"
        )
    anchors = list(sched.anchor_range(T))
    if not anchors:
        raise DegenerateMoments(
            "m_lr", detail=f"length {T} hosts no anchor (need {sched.min_sequence_length})"
        )
    obs = np.stack(seqs)
    n = obs.shape[0]
    k = n_o**sched.ell
    powers = n_o ** np.arange(sched.ell - 1, -1, -1)
    l_off = np.asarray(sched.left_offsets)
    r_off = np.asarray(sched.right_offsets)
    start = np.zeros((n_o, n_o, k))
    start_codes = obs[:, 2 + r_off] @ powers
    np.add.at(start, (obs[:, 0], obs[:, 1], start_codes), 1.0)
    start /= n
    start_t = NamedTensor(start, [SYM, SYM2, OR])

    models = []
    for s_pos in anchors:
        left = obs[:, s_pos - sched.n_d + l_off] @ powers
        right = obs[:, s_pos + 1 + r_off] @ powers
        right_next = obs[:, s_pos + 2 + r_off] @ powers
        lr = np.zeros((k, k))
        lr_shift = np.zeros((k, k))
        lro = np.zeros((k, k, n_o))
        oo = np.zeros((n_o, n_o))
        np.add.at(lr, (left, right), 1.0)
        np.add.at(lr_shift, (left, right_next), 1.0)
        np.add.at(lro, (left, right, obs[:, s_pos]), 1.0)
        np.add.at(oo, (obs[:, s_pos], obs[:, s_pos + 1]), 1.0)
        lr /= n
        lr_shift /= n
        lro /= n
        oo /= n
        needed = min(sched.joint_rank, k)
        if numerical_rank(lr, rtol) < needed:
            raise DegenerateMoments(
                "m_lr", anchor=s_pos, detail=f"rank below {needed} at rtol {rtol}"
            )
        eff_lr = max(rtol, _noise_rtol(lr, n)) if noise_floor else rtol
        eff_oo = max(rtol, _noise_rtol(oo, n)) if noise_floor else rtol
        try:
            d_mat, x_flat = _pinv_product(
                lr, [lr_shift, lro.reshape(k, -1)], eff_lr, max_rank=needed
            )
            (o_mat,) = _pinv_product(oo.T, [oo.T], eff_oo, max_rank=sched.n_x)
        except RankZero as exc:
            raise DegenerateMoments("m_lr", anchor=s_pos, detail=str(exc)) from None
        x_cube = x_flat.reshape(k, k, n_o)
        models.append(
            ObservableModel(
                d_tilde=NamedTensor(d_mat, [OR_IN, OR]),
                x_tilde=NamedTensor(x_cube, [OR_IN, OR, SYM]),
                o_tilde=NamedTensor(o_mat, [SYM, SYM2]),
                start_factor=start_t,
                end_factor=NamedTensor(x_cube.sum(axis=1), [OR_IN, SYM]),
                pinv_rtol=rtol,
                n_o=n_o,
                ell=sched.ell,
                variant="per_t",
                anchor=s_pos,
                build_stats=BuildStats(pinv_ops=2, contraction_ops=3),
            )
        )
    return models


@dataclass(frozen=True)
class InferenceResult:
    """Signed log-magnitude of one sequence-probability estimate.

    ``sign`` is 0 only when the raw estimate is exactly zero; ``clamped``
    flags estimates that a caller would have to floor before taking a log
    likelihood (nonpositive raw values).
    """

    log_value: float
    sign: int
    clamped: bool

    @property
    def value(self) -> float:
        return self.sign * math.exp(self.log_value) if self.sign else 0.0


def _check_sequence(model_n_o: int, obs: np.ndarray) -> None:
    if obs.shape[0] < 3:
        raise SequenceTooShort(f"need at least 3 symbols, got {obs.shape[0]}")
    if obs.min() < 0 or obs.max() >= model_n_o:
        raise UnknownSymbol(
            f"symbol {int(obs.max())} outside alphabet of size {model_n_o}"
        )


def infer(
    model: ObservableModel, obs: Sequence[int], renormalize: bool = True
) -> InferenceResult:
    """Probability estimate of one observation sequence.

    The message starts as the boundary factor sliced at the first two
    symbols, advances through one transfer/symbol stage per interior
    position, and closes with the marginalized end factor at the last
    symbol.  Per-step renormalization only moves scale into the log
    accumulator; it never changes the result.
    """
    obs = np.asarray(obs, dtype=np.int64)
    _check_sequence(model.n_o, obs)
    d_mat = model.d_tilde.data
    x_cube = model.x_tilde.data
    o_mat = model.o_tilde.data
    v = model.start_factor.data[obs[0], obs[1], :].copy()
    log_scale = 0.0
    for t in range(2, obs.shape[0] - 1):
        v = (v @ d_mat) @ (x_cube @ o_mat[:, obs[t]])
        if renormalize:
            norm = np.abs(v).sum()
            if norm == 0.0:
                return InferenceResult(-math.inf, 0, True)
            v = v / norm
            log_scale += math.log(norm)
    scalar = float((v @ d_mat) @ (model.end_factor.data @ o_mat[:, obs[-1]]))
    if scalar == 0.0:
        return InferenceResult(-math.inf, 0, True)
    sign = 1 if scalar > 0 else -1
    return InferenceResult(math.log(abs(scalar)) + log_scale, sign, sign < 0)


def infer_batch(model: ObservableModel, obs: np.ndarray) -> list[InferenceResult]:
    """Vectorized :func:`infer` over equal-length sequences (rows)."""
    obs = np.asarray(obs, dtype=np.int64)
    n, T = obs.shape
    if T < 3:
        raise SequenceTooShort(f"need at least 3 symbols, got {T}")
    if obs.min() < 0 or obs.max() >= model.n_o:
        raise UnknownSymbol("symbol outside alphabet")
    d_mat = model.d_tilde.data
    x_cube = model.x_tilde.data
    o_mat = model.o_tilde.data
    x_by_symbol = np.einsum("qro,os->sqr", x_cube, o_mat)
    v = model.start_factor.data[obs[:, 0], obs[:, 1], :]
    log_scale = np.zeros(n)
    for t in range(2, T - 1):
        u = v @ d_mat
        v = np.einsum("nq,nqr->nr", u, x_by_symbol[obs[:, t]])
        norm = np.abs(v).sum(axis=1)
        dead = norm == 0.0
        norm[dead] = 1.0
        v = v / norm[:, None]
        log_scale += np.where(dead, -np.inf, np.log(norm))
    end = model.end_factor.data @ o_mat
    scalar = np.einsum("nq,nq->n", v @ d_mat, end[:, obs[:, -1]].T)
    out = []
    for i in range(n):
        if scalar[i] == 0.0 or not np.isfinite(log_scale[i]):
            out.append(InferenceResult(-math.inf, 0, True))
        else:
            sign = 1 if scalar[i] > 0 else -1
            out.append(
                InferenceResult(
                    math.log(abs(scalar[i])) + log_scale[i], sign, sign < 0
                )
            )
    return out


def infer_per_t(
    models: Sequence[ObservableModel], obs: Sequence[int]
) -> InferenceResult:
    """Inference with per-anchor tensors (nearest anchor at the edges)."""
    obs = np.asarray(obs, dtype=np.int64)
    if not models:
        raise DegenerateMoments("m_lr", detail="empty per-anchor model list")
    _check_sequence(models[0].n_o, obs)
    anchors = [m.anchor for m in models]

    def at(position: int) -> ObservableModel:
        idx = int(np.argmin([abs(a - position) for a in anchors]))
        return models[idx]

    v = models[0].start_factor.data[obs[0], obs[1], :].copy()
    log_scale = 0.0
    for t in range(2, obs.shape[0] - 1):
        step = at(t)
        v = (v @ at(t - 1).d_tilde.data) @ (
            step.x_tilde.data @ step.o_tilde.data[:, obs[t]]
        )
        norm = np.abs(v).sum()
        if norm == 0.0:
            return InferenceResult(-math.inf, 0, True)
        v = v / norm
        log_scale += math.log(norm)
    last = at(obs.shape[0] - 1)
    scalar = float(
        (v @ at(obs.shape[0] - 2).d_tilde.data)
        @ (last.end_factor.data @ last.o_tilde.data[:, obs[-1]])
    )
    if scalar == 0.0:
        return InferenceResult(-math.inf, 0, True)
    sign = 1 if scalar > 0 else -1
    return InferenceResult(math.log(abs(scalar)) + log_scale, sign, sign < 0)


def learn_spectral(
    sequences: Sequence[np.ndarray],
    n_o: int,
    sched: ObservationSchedule,
    rtol: float,
    noise_floor: bool = True,
) -> ObservableModel:
    """Pooled moment estimation followed by the batched build."""
    return build_observable(
        estimate_moments(sequences, n_o, sched), rtol, noise_floor=noise_floor
    )


# ---------------------------------------------------------------------------
# scoring and persistence

SCORE_HEADER = ["id", "log_value", "sign", "clamped", "norm_loglik"]


def score_sequences(model, sequences: Iterable, error_sink=None):
    """Yield one score row per sequence; failures become NaN rows.

    ``model`` is a batched :class:`ObservableModel` or a per-anchor list.
    Row-level errors are reported to ``error_sink`` (default stderr) and do
    not stop the stream.
    """
    sink = error_sink if error_sink is not None else sys.stderr
    per_t = isinstance(model, (list, tuple))
    for idx, seq in enumerate(sequences):
        try:
            seq = np.asarray(seq, dtype=np.int64)
            res = infer_per_t(model, seq) if per_t else infer(model, seq)
            norm = res.log_value / seq.shape[0]
            yield [idx, f"{res.log_value:.17g}", res.sign, str(res.clamped).lower(),
                   f"{norm:.17g}"]
        except SpectralError as exc:
            print(f"line {idx + 1}: {type(exc).__name__}: {exc}", file=sink)
            yield [idx, "nan", 0, "true", "nan"]


def score_file(model, sequences: Iterable, out_path, error_sink=None) -> int:
    """Write the score CSV; returns the number of data rows."""
    count = 0
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_HEADER)
        for row in score_sequences(model, sequences, error_sink):
            writer.writerow(row)
            count += 1
    return count


def _model_tensors(model: ObservableModel, prefix: str = ""):
    return [
        (prefix + "d_tilde", model.d_tilde.data),
        (prefix + "x_tilde", model.x_tilde.data),
        (prefix + "o_tilde", model.o_tilde.data),
        (prefix + "start_factor", model.start_factor.data),
        (prefix + "end_factor", model.end_factor.data),
    ]


def _model_from_tensors(tensors, meta, prefix: str = "", anchor=None):
    return ObservableModel(
        d_tilde=NamedTensor(tensors[prefix + "d_tilde"], [OR_IN, OR]),
        x_tilde=NamedTensor(tensors[prefix + "x_tilde"], [OR_IN, OR, SYM]),
        o_tilde=NamedTensor(tensors[prefix + "o_tilde"], [SYM, SYM2]),
        start_factor=NamedTensor(tensors[prefix + "start_factor"], [SYM, SYM2, OR]),
        end_factor=NamedTensor(tensors[prefix + "end_factor"], [OR_IN, SYM]),
        pinv_rtol=float(meta["rtol"]),
        n_o=int(meta["n_o"]),
        ell=int(meta["ell"]),
        variant=meta["variant"],
        anchor=anchor,
    )


def save_observable(path, model) -> None:
    """Persist a batched model or a per-anchor model list."""
    if isinstance(model, (list, tuple)):
        first = model[0]
        meta = {
            "variant": "per_t",
            "n_o": first.n_o,
            "ell": first.ell,
            "rtol": first.pinv_rtol,
            "anchors": [m.anchor for m in model],
        }
        tensors = []
        for m in model:
            tensors.extend(_model_tensors(m, prefix=f"a{m.anchor}."))
        write_container(path, "observable-model", meta, tensors)
    else:
        meta = {
            "variant": "batched",
            "n_o": model.n_o,
            "ell": model.ell,
            "rtol": model.pinv_rtol,
        }
        write_container(path, "observable-model", meta, _model_tensors(model))


def load_observable(path):
    kind, meta, tensors = read_container(path)
    if kind != "observable-model":
        raise SpectralError(f"not an observable-model file (kind={kind})")
    if meta["variant"] == "per_t":
        return [
            _model_from_tensors(tensors, meta, prefix=f"a{a}.", anchor=int(a))
            for a in meta["anchors"]
        ]
    return _model_from_tensors(tensors, meta)


def save_moments(path, m: MomentSet) -> None:
    meta = {
        "n_o": m.n_o,
        "n_x": m.schedule.n_x,
        "n_d": m.schedule.n_d,
        "ell": m.schedule.ell,
        "right_offsets": list(m.schedule.right_offsets),
        "left_offsets": list(m.schedule.left_offsets),
        "window_count": m.window_count,
        "pair_count": m.pair_count,
        "start_count": m.start_count,
    }
    tensors = [
        ("m_lr", m.m_lr.data),
        ("m_lr_shift", m.m_lr_shift.data),
        ("m_lro", m.m_lro.data),
        ("m_oo", m.m_oo.data),
        ("m_start", m.m_start.data),
    ]
    write_container(path, "moments", meta, tensors)


def load_moments(path) -> MomentSet:
    kind, meta, tensors = read_container(path)
    if kind != "moments":
        raise SpectralError(f"not a moments file (kind={kind})")
    sched = ObservationSchedule(
        n_x=int(meta["n_x"]),
        n_d=int(meta["n_d"]),
        ell=int(meta["ell"]),
        right_offsets=tuple(meta["right_offsets"]),
        left_offsets=tuple(meta["left_offsets"]),
    )
    return MomentSet(
        m_lr=NamedTensor(tensors["m_lr"], [OL, OR]),
        m_lr_shift=NamedTensor(tensors["m_lr_shift"], [OL, OR]),
        m_lro=NamedTensor(tensors["m_lro"], [OL, OR, SYM]),
        m_oo=NamedTensor(tensors["m_oo"], [SYM, SYM2]),
        m_start=NamedTensor(tensors["m_start"], [SYM, SYM2, OR]),
        n_o=int(meta["n_o"]),
        schedule=sched,
        window_count=int(meta["window_count"]),
        pair_count=int(meta["pair_count"]),
        start_count=int(meta["start_count"]),
    )
