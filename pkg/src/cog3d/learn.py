"""Training machinery: n-slack cutting-plane structural SVM with margin
rescaling, latent training via the concave-convex procedure, and an SMO
RBF-kernel binary SVM for the cascade stage.

The structured learners are generic over the feature map: an example is a
ground-truth feature vector plus a candidate set of (loss, feature)
pairs. Callers encode presence indicators, bias features, and latent
height enumeration into those vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoPositiveExamples, SingleClass


@dataclass
class LinearDetectorModel:
    """Per-category linear scorer over cuboid feature vectors."""

    category: str
    weights: np.ndarray
    bias: float
    feature_config: object  # FeatureConfig; kept loose to avoid an import cycle
    train_config: "TrainConfig"

    def score(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    eps_cp: float = 1e-3  # cutting-plane violation tolerance
    max_iterations: int = 100  # outer cutting-plane passes
    qp_tol: float = 1e-9  # dual-ascent improvement tolerance
    qp_max_passes: int = 10000
    latent: bool = False
    cccp_max_rounds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0 or self.eps_cp <= 0:
            raise ValueError("C and eps_cp must be positive")


@dataclass
class StructuredExample:
    """One training scene: ground-truth feature and alternative candidates.

    candidate_features: (m, d); candidate_losses: (m,). The ground-truth
    feature is the zero vector for scenes where the instance is absent.
    """

    gt_feature: np.ndarray
    candidate_features: np.ndarray
    candidate_losses: np.ndarray


@dataclass
class WorkingSet:
    """Accumulated cutting-plane constraints with their dual variables."""

    deltas: list[np.ndarray] = field(default_factory=list)  # gt - candidate
    losses: list[float] = field(default_factory=list)
    example: list[int] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    weights: np.ndarray  # includes whatever bias column the caller added
    objectives: list[float]  # dual objective after each cutting-plane pass
    converged: bool
    iterations: int
    working_set: "WorkingSet" = field(default_factory=lambda: WorkingSet())


def separation_oracle(
    w: np.ndarray, example: StructuredExample
) -> tuple[int, float]:
    """Most-violated candidate: argmax of loss + w . feature.

    Returns (candidate index, violation margin); the violation is
    loss + w.(feature - gt_feature), to be compared against the slack.
    """
    scores = example.candidate_losses + example.candidate_features @ w
    j = int(np.argmax(scores))
    violation = float(scores[j] - example.gt_feature @ w)
    return j, violation


def _solve_working_set(ws: WorkingSet, w: np.ndarray, n: int, config: TrainConfig) -> np.ndarray:
    """Dual coordinate ascent over the working set; returns updated w.

    Dual: max sum(alpha * loss) - 0.5 ||sum(alpha * delta)||^2 subject to
    alpha >= 0 and, per example, sum(alpha) <= C / n.
    """
    if not ws.deltas:
        return w
    deltas = np.array(ws.deltas)
    losses = np.array(ws.losses)
    examples = np.array(ws.example)
    alpha = np.array(ws.alpha)
    sqn = np.einsum("ij,ij->i", deltas, deltas)
    cap = config.C / n
    per_ex = np.zeros(examples.max() + 1)
    np.add.at(per_ex, examples, alpha)
    for _ in range(config.qp_max_passes):
        best_gain = 0.0
        for k in range(len(alpha)):
            if sqn[k] <= 0:
                continue
            grad = losses[k] - deltas[k] @ w
            step = grad / sqn[k]
            lo = -alpha[k]
            hi = cap - per_ex[examples[k]]
            step = min(max(step, lo), hi)
            if step == 0.0:
                continue
            gain = step * grad - 0.5 * step * step * sqn[k]
            if gain <= 0.0:
                continue
            alpha[k] += step
            per_ex[examples[k]] += step
            w = w + step * deltas[k]
            best_gain = max(best_gain, gain)
        if best_gain < config.qp_tol:
            break
    ws.alpha = alpha.tolist()
    return w


def _dual_objective(ws: WorkingSet, w: np.ndarray) -> float:
    if not ws.deltas:
        return 0.0
    return float(np.dot(ws.alpha, ws.losses) - 0.5 * (w @ w))


def train_nslack(
    examples: list[StructuredExample],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Cutting-plane training of the n-slack margin-rescaled objective.

    Alternates most-violated-constraint generation with working-set QP
    solves until no example's violation exceeds its slack by more than
    eps_cp.
    """
    if not examples:
        raise NoPositiveExamples("empty training set")
    dim = len(examples[0].gt_feature)
    n = len(examples)
    w = np.zeros(dim)
    ws = WorkingSet()
    objectives: list[float] = []
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        added = 0
        for i, ex in enumerate(examples):
            if len(ex.candidate_losses) == 0:
                continue
            j, violation = separation_oracle(w, ex)
            xi = _slack(ws, w, i)
            if violation > xi + config.eps_cp:
                ws.deltas.append(ex.gt_feature - ex.candidate_features[j])
                ws.losses.append(float(ex.candidate_losses[j]))
                ws.example.append(i)
                ws.alpha.append(0.0)
                added += 1
        if added == 0:
            converged = True
            objectives.append(_dual_objective(ws, w))
            break
        w = _solve_working_set(ws, w, n, config)
        objectives.append(_dual_objective(ws, w))
    return TrainResult(
        weights=w,
        objectives=objectives,
        converged=converged,
        iterations=it,
        working_set=ws,
    )


def _slack(ws: WorkingSet, w: np.ndarray, i: int) -> float:
    xi = 0.0
    for k, ei in enumerate(ws.example):
        if ei == i:
            xi = max(xi, ws.losses[k] - ws.deltas[k] @ w)
    return xi


def convergence_gaps(
    examples: list[StructuredExample], result: TrainResult
) -> np.ndarray:
    """Per-example gap between the most-violated constraint and the slack
    granted by the working set; all gaps <= eps_cp at convergence."""
    w = result.weights
    out = np.zeros(len(examples))
    for i, ex in enumerate(examples):
        if len(ex.candidate_losses) == 0:
            continue
        _, violation = separation_oracle(w, ex)
        out[i] = violation - _slack(result.working_set, w, i)
    return out


@dataclass
class LatentExample:
    """Latent-height training scene.

    gt_features: (n_heights, d) ground-truth features per imputable height
    (a single row for examples with no latent freedom, e.g. negatives);
    candidates enumerate (cuboid, height) pairs jointly.
    """

    gt_features: np.ndarray
    candidate_features: np.ndarray
    candidate_losses: np.ndarray
    is_positive: bool


@dataclass
class CCCPResult:
    weights: np.ndarray
    objectives: list[float]  # inner dual objective per outer round
    imputed_heights: np.ndarray
    rounds: int


def train_latent_cccp(
    examples: list[LatentExample],
    config: TrainConfig,
    w_init: np.ndarray,
    init_heights: np.ndarray | None = None,
) -> CCCPResult:
    """Latent-variable training: alternate height imputation for positives
    with convex n-slack training (candidates already enumerate latent
    assignments). Stops when imputed heights are stable or after
    cccp_max_rounds. init_heights, when given, fixes the first round's
    imputation (e.g. the center slice) instead of the argmax under
    w_init."""
    if not any(ex.is_positive for ex in examples):
        raise NoPositiveExamples("latent training requires a positive example")
    w = w_init.astype(np.float64).copy()
    heights = -np.ones(len(examples), dtype=np.int64)
    objectives: list[float] = []
    rounds = 0
    for rounds in range(1, config.cccp_max_rounds + 1):
        if rounds == 1 and init_heights is not None:
            new_heights = np.asarray(init_heights, dtype=np.int64).copy()
        else:
            new_heights = np.array(
                [
                    int(np.argmax(ex.gt_features @ w)) if ex.is_positive else 0
                    for ex in examples
                ],
                dtype=np.int64,
            )
        convex = [
            StructuredExample(
                gt_feature=ex.gt_features[h],
                candidate_features=ex.candidate_features,
                candidate_losses=ex.candidate_losses,
            )
            for ex, h in zip(examples, new_heights)
        ]
        result = train_nslack(convex, replace(config, latent=False))
        # Monotone variant: keep the previous weights if the fresh solve
        # does not improve the regularized risk under the new imputation.
        if _primal_objective(convex, result.weights, config) <= _primal_objective(
            convex, w, config
        ):
            w = result.weights
        objectives.append(_primal_objective(convex, w, config))
        if np.array_equal(new_heights, heights):
            heights = new_heights
            break
        heights = new_heights
    return CCCPResult(weights=w, objectives=objectives, imputed_heights=heights, rounds=rounds)


def _primal_objective(
    examples: list[StructuredExample], w: np.ndarray, config: TrainConfig
) -> float:
    """Regularized risk 0.5||w||^2 + C/n sum_i max-violation slack."""
    total = 0.0
    for ex in examples:
        if len(ex.candidate_losses) == 0:
            continue
        _, violation = separation_oracle(w, ex)
        total += max(0.0, violation)
    return float(0.5 * (w @ w) + config.C / len(examples) * total)


@dataclass
class KernelSVMModel:
    """RBF-kernel binary SVM: f(x) = sum_i coef_i K(sv_i, x) + bias."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        d2 = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ self.support_vectors.T
            + np.sum(self.support_vectors * self.support_vectors, axis=1)[None, :]
        )
        return np.exp(-self.gamma * np.maximum(d2, 0.0)) @ self.dual_coef + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.decision(x) >= 0.0, 1, -1)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        - 2.0 * a @ b.T
        + np.sum(b * b, axis=1)[None, :]
    )
    return np.exp(-gamma * np.maximum(d2, 0.0))


def train_rbf_svm(
    features: np.ndarray,
    labels: np.ndarray,
    gamma: float,
    c: float,
    tol: float = 1e-3,
    max_iter: int = 100000,
) -> KernelSVMModel:
    """Sequential minimal optimization with second-order pair selection.

    Labels must be +/-1 with both classes present. Shrinking is disabled
    for determinism; stops when the maximal KKT violation m(alpha) -
    M(alpha) drops below tol.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if set(np.unique(y)) - {1.0, -1.0}:
        raise ValueError("labels must be +1 / -1")
    if len(np.unique(y)) < 2:
        raise SingleClass("both classes are required")
    n = len(y)
    K = rbf_kernel(x, x, gamma)
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    eps = 1e-12
    for _ in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < c - eps)) | ((y < 0) & (alpha > eps))
        low = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < c - eps))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        m_up = yg[i]
        m_low = np.min(np.where(low, yg, np.inf))
        if m_up - m_low < tol:
            break
        # Second-order selection of j among the low set.
        diff = m_up - yg
        quad = np.maximum(Q[i, i] + np.diag(Q) - 2.0 * y[i] * y * Q[i], 1e-12)
        gain = np.where(low & (diff > 0), diff * diff / quad, -np.inf)
        j = int(np.argmax(gain))
        if not np.isfinite(gain[j]):
            break
        # Analytic step t along the direction (+y_i, -y_j), which keeps
        # y . alpha = 0; box constraints cap it.
        t = diff[j] / quad[j]
        t = min(t, c - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else c - alpha[j])
        if t <= 0:
            break
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        grad += Q[:, i] * (y[i] * t) - Q[:, j] * (y[j] * t)
    # Bias from free support vectors (fallback: midpoint of KKT bounds).
    yg = -y * grad
    free = (alpha > eps) & (alpha < c - eps)
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        up = ((y > 0) & (alpha < c - eps)) | ((y < 0) & (alpha > eps))
        low = ((y > 0) & (alpha > eps)) | ((y < 0) & (alpha < c - eps))
        hi = np.max(yg[up]) if up.any() else 0.0
        lo = np.min(yg[low]) if low.any() else 0.0
        bias = float(0.5 * (hi + lo))
    sv = alpha > eps
    return KernelSVMModel(
        support_vectors=x[sv].copy(),
        dual_coef=(alpha * y)[sv].copy(),
        bias=bias,
        gamma=gamma,
    )
