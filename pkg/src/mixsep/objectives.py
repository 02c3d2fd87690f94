"""Training losses: masked per-stream NLL, permutation-invariant assignment, CTC."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as tn

# ---------------------------------------------------------------------------
# assignment


@dataclass(frozen=True)
class Assignment:
    perm: tuple  # perm[j] = target index for prediction stream j
    loss: float


def perm_loss(matrix: np.ndarray, perm) -> float:
    total = 0.0
    for j, i in enumerate(perm):
        total += float(matrix[j, i])
    return total / len(perm)


def _tol(matrix: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.abs(matrix).max()))


@lru_cache(maxsize=16)
def _all_perms(K: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(K))), dtype=np.int64).reshape(-1, K)


def brute_force_assign(matrix: np.ndarray) -> Assignment:
    """Enumerate all K! permutations; among minimisers take the lexicographically smallest."""
    K = matrix.shape[0]
    perms = _all_perms(K)  # already in lexicographic order
    totals = matrix[np.arange(K), perms].sum(axis=1)
    best = totals.min()
    first = int(np.flatnonzero(totals <= best + K * _tol(matrix))[0])
    perm = tuple(int(i) for i in perms[first])
    return Assignment(perm, perm_loss(matrix, perm))


def hungarian(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method for a square cost matrix.

    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``cost[r, c] - u[r] - v[c] >= 0`` with equality on the
    returned assignment.
    """
    n = cost.shape[0]
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[col] = row matched to col (1-based, 0 = free)
    way = [0] * (n + 1)
    a = cost.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, np.array(u[1:]), np.array(v[1:])


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols: set[int]) -> bool:
    match: dict[int, int] = {}

    def augment(r, seen):
        for c in adj[r]:
            if c in cols and c not in seen:
                seen.add(c)
                if c not in match or augment(match[c], seen):
                    match[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def hungarian_assign(matrix: np.ndarray) -> Assignment:
    """Optimal assignment via the Hungarian method, tie-broken lexicographically.

    Optimal assignments are exactly the perfect matchings on zero-reduced-cost
    edges of an optimal dual, so the lexicographically smallest one is found
    greedily on that graph.
    """
    K = matrix.shape[0]
    row_to_col, u, v = hungarian(matrix)
    tight = (matrix - u[:, None] - v[None, :]) <= K * _tol(matrix)
    if tight.sum() == K:
        perm = tuple(row_to_col)
    else:
        adj = [list(np.flatnonzero(tight[r])) for r in range(K)]
        free = set(range(K))
        chosen = []
        for r in range(K):
            for c in adj[r]:
                if c in free and _has_perfect_matching(adj, list(range(r + 1, K)), free - {c}):
                    chosen.append(int(c))
                    free.discard(c)
                    break
        perm = tuple(chosen)
    return Assignment(perm, perm_loss(matrix, perm))


def pit_assign(matrix, method: str = "hungarian") -> Assignment:
    """Permutation minimising the mean of ``matrix[j, perm[j]]``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"need a square matrix, got shape {matrix.shape}")
    if not np.isfinite(matrix).all():
        raise ValueError("pair loss matrix has non-finite entries")
    if method == "brute":
        if matrix.shape[0] > 8:
            raise ValueError("brute-force assignment is limited to K <= 8")
        return brute_force_assign(matrix)
    if method == "hungarian":
        return hungarian_assign(matrix)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# masked pseudo source separation


def stream_pair_loss(log_post, units, mask, sil: int | None = None, sil_weight: float = 1.0) -> tn.Tensor:
    """Mean negative log-probability of ``units`` over the masked frames.

    ``log_post`` is (T, V) for one prediction stream, ``units`` the (T,)
    target stream and ``mask`` the (T,) boolean mask.
    """
    log_post = tn.as_tensor(log_post)
    units = np.asarray(units, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if not (log_post.shape[0] == units.size == mask.size):
        raise ValueError("log posteriors, units and mask disagree in length")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("empty mask")
    weights = mask.astype(np.float64)
    if sil is not None and sil_weight != 1.0:
        weights = weights * np.where(units == sil, sil_weight, 1.0)
    picked = tn.gather_last(log_post, units)
    return tn.scale(tn.sum(tn.mul(picked, weights)), -1.0 / n_masked)


def pair_loss_matrix(log_posts, targets, masks, sil: int | None = None, sil_weight: float = 1.0) -> tn.Tensor:
    """All (stream j, source i) masked NLLs at once.

    ``log_posts`` (B, K, T, V), ``targets`` (B, K, T), ``masks`` (B, T);
    returns a (B, K, K) tensor with entry [b, j, i].
    """
    log_posts = tn.as_tensor(log_posts)
    targets = np.asarray(targets, dtype=np.int64)
    masks = np.asarray(masks, dtype=bool)
    B, K, T, V = log_posts.shape
    if targets.shape != (B, K, T):
        raise ValueError(f"targets shape {targets.shape} != {(B, K, T)}")
    if masks.shape != (B, T):
        raise ValueError(f"mask shape {masks.shape} != {(B, T)}")
    counts = masks.sum(axis=1)
    if (counts == 0).any():
        raise ValueError("empty mask")
    b = np.arange(B)[:, None, None, None]
    j = np.arange(K)[None, :, None, None]
    t = np.arange(T)[None, None, None, :]
    z = targets[:, None, :, :]  # (B, 1, K_i, T)
    picked = tn.getitem(log_posts, (b, j, t, z))  # (B, K_j, K_i, T)
    w = masks[:, None, None, :] / counts[:, None, None, None]
    if sil is not None and sil_weight != 1.0:
        w = w * np.where(z == sil, sil_weight, 1.0)
    return tn.neg(tn.sum(tn.mul(picked, w), axis=-1))


def masked_pss_loss(log_posts, targets, masks, method: str = "hungarian", sil: int | None = None,
                    sil_weight: float = 1.0):
    """Permutation-invariant masked prediction loss, averaged over the batch.

    Accepts a single sample ((K, T, V), (K, T), (T,)) or a batch.  Returns
    ``(loss, assignments, pair_matrices)``; gradients flow only through the
    entries each sample's chosen permutation selects.
    """
    log_posts = tn.as_tensor(log_posts)
    if log_posts.ndim == 3:
        log_posts = tn.reshape(log_posts, (1,) + log_posts.shape)
        targets = np.asarray(targets)[None]
        masks = np.asarray(masks)[None]
    mats = pair_loss_matrix(log_posts, targets, masks, sil, sil_weight)
    B, K = mats.shape[:2]
    assignments = [pit_assign(mats.data[b], method) for b in range(B)]
    rows = np.repeat(np.arange(B), K)
    js = np.tile(np.arange(K), B)
    cols = np.array([i for a in assignments for i in a.perm], dtype=np.int64)
    loss = tn.scale(tn.sum(tn.getitem(mats, (rows, js, cols))), 1.0 / (B * K))
    return loss, assignments, mats.data.copy()


def masked_accuracy(log_posts: np.ndarray, targets: np.ndarray, masks: np.ndarray, assignments) -> float:
    """Fraction of masked (stream, frame) pairs whose argmax matches the assigned target."""
    pred = np.asarray(log_posts).argmax(axis=-1)  # (B, K, T)
    hits = total = 0
    for b, a in enumerate(assignments):
        m = masks[b]
        for j, i in enumerate(a.perm):
            hits += int((pred[b, j][m] == targets[b, i][m]).sum())
            total += int(m.sum())
    return hits / max(total, 1)


# ---------------------------------------------------------------------------
# CTC

BLANK = 0
CHARS = "abcdefghijklmnopqrstuvwxyz '"
CHAR_VOCAB = len(CHARS) + 1  # 29 with the blank


def encode_text(text: str) -> list[int]:
    try:
        return [CHARS.index(ch) + 1 for ch in text]
    except ValueError as exc:
        raise ValueError(f"character outside the vocabulary in {text!r}") from exc


def decode_ids(ids) -> str:
    return "".join(CHARS[i - 1] for i in ids)


def ctc_min_frames(target) -> int:
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extend(target, blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_mask(ext: np.ndarray, blank: int) -> np.ndarray:
    skip = np.zeros(ext.size, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return skip


def ctc_alpha_beta(lp: np.ndarray, target, blank: int = BLANK):
    """Log-space forward and backward variables; beta excludes the frame's own emission."""
    ext = _extend(list(target), blank)
    T, S = lp.shape[0], ext.size
    skip = _skip_mask(ext, blank)
    emit = lp[:, ext]  # (T, S)
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]
    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc
    if S > 1:
        log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        log_p = alpha[T - 1, 0]
    return alpha, beta, ext, float(log_p)


def ctc_loss(log_post, target, blank: int = BLANK) -> float:
    """``-log p(target | log_post)``; ``+inf`` when the target cannot fit in T frames."""
    lp = log_post.data if isinstance(log_post, tn.Tensor) else np.asarray(log_post, dtype=np.float64)
    target = list(target)
    if ctc_min_frames(target) > lp.shape[0]:
        return float("inf")
    with np.errstate(invalid="ignore"):
        _, _, _, log_p = ctc_alpha_beta(lp, target, blank)
    return -log_p


def ctc_nll(log_post, target, blank: int = BLANK) -> tn.Tensor:
    """Differentiable CTC negative log-likelihood for one (T, V) stream."""
    log_post = tn.as_tensor(log_post)
    lp = log_post.data
    target = list(target)
    if ctc_min_frames(target) > lp.shape[0]:
        raise ValueError("target too long for the number of frames")
    with np.errstate(invalid="ignore"):
        alpha, beta, ext, log_p = ctc_alpha_beta(lp, target, blank)

    def grad_fn(g):
        occ = np.exp(alpha + beta - log_p)  # (T, S) state occupancies
        out = np.zeros_like(lp)
        np.add.at(out, (slice(None), ext), occ)
        return (-g * out,)

    return tn._node(np.array(-log_p), (log_post,), grad_fn, "ctc")


def ctc_matrix(log_posts: np.ndarray, targets, blank: int = BLANK) -> np.ndarray:
    K = len(targets)
    return np.array([[ctc_loss(log_posts[j], targets[i], blank) for i in range(K)] for j in range(K)])


def pit_ctc_loss(log_posts, targets, method: str = "hungarian", blank: int = BLANK):
    """PIT over K CTC streams for one utterance.

    ``log_posts`` is (K, T, V); ``targets`` K id sequences (possibly empty).
    Infeasible pairings cost +inf and are avoided when any feasible
    permutation exists.  Returns ``(loss, assignment, matrix)``.
    """
    log_posts = tn.as_tensor(log_posts)
    K = log_posts.shape[0]
    if len(targets) != K:
        raise ValueError(f"{len(targets)} transcripts for {K} streams")
    mat = ctc_matrix(log_posts.data, targets, blank)
    if np.isinf(mat).all(axis=1).any():
        raise ValueError("an output stream cannot fit any transcript")
    finite = np.isfinite(mat)
    big = 1e6 * (1.0 + np.abs(mat[finite]).max()) if finite.any() else 1e6
    assignment = pit_assign(np.where(finite, mat, big), method)
    if not all(finite[j, i] for j, i in enumerate(assignment.perm)):
        raise ValueError("no feasible stream-to-transcript permutation")
    terms = [ctc_nll(log_posts[j], targets[i], blank) for j, i in enumerate(assignment.perm)]
    loss = tn.scale(tn.sum(tn.stack(terms)), 1.0 / K)
    return loss, Assignment(assignment.perm, perm_loss(mat, assignment.perm)), mat


def batch_pit_ctc_loss(log_posts, transcripts, method: str = "hungarian"):
    """Mean PIT-CTC over a batch; ``log_posts`` (B, K, T, V), transcripts B lists of K id lists."""
    log_posts = tn.as_tensor(log_posts)
    B = log_posts.shape[0]
    losses, assignments = [], []
    for b in range(B):
        loss, a, _ = pit_ctc_loss(log_posts[b], transcripts[b], method)
        losses.append(loss)
        assignments.append(a)
    return tn.scale(tn.sum(tn.stack(losses)), 1.0 / B), assignments


# ---------------------------------------------------------------------------
# activity (diarization) loss

PROB_CLIP = 1e-6


def bce_matrix(hyp, ref) -> tn.Tensor:
    """(S, S) mean binary cross-entropies, entry [j, i] = hyp column j vs reference column i."""
    hyp = tn.clip(tn.as_tensor(hyp), PROB_CLIP, 1.0 - PROB_CLIP)
    ref = np.asarray(ref, dtype=np.float64)
    T = ref.shape[0]
    pos = tn.matmul(tn.swapaxes(tn.log(hyp), 0, 1), ref)
    negs = tn.matmul(tn.swapaxes(tn.log(tn.sub(1.0, hyp)), 0, 1), 1.0 - ref)
    return tn.scale(tn.add(pos, negs), -1.0 / T)


def pit_bce_loss(hyp, ref, method: str = "hungarian"):
    """PIT binary cross-entropy between (T, S) activity probabilities and a (T, S) reference."""
    hyp = tn.as_tensor(hyp)
    ref = np.asarray(ref, dtype=np.float64)
    if hyp.shape != ref.shape:
        raise ValueError(f"hypothesis shape {hyp.shape} != reference {ref.shape}")
    mat = bce_matrix(hyp, ref)
    a = pit_assign(mat.data, method)
    S = ref.shape[1]
    loss = tn.scale(tn.sum(tn.getitem(mat, (np.arange(S), np.array(a.perm)))), 1.0 / S)
    return loss, a, mat.data.copy()
