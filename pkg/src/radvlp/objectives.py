"""Training losses: masked-token cross-entropy, the section-matching and
global-alignment symmetric contrastive losses, their weighted phase
combinations, and the NT-Xent loss for image-only pretraining.

Every loss has a companion ``*_grad`` returning the analytic gradient w.r.t.
its embedding/logit inputs; the test suite checks these against central
finite differences. The contrastive losses are evaluated on the inputs as
given (rows are expected unit-norm but are not re-normalized here), so the
gradients are of the literal expressions.

Conventions for the symmetric pair loss over N matched rows (a_i, b_i):

    L = -(1/N) * sum_i [ log softmax_j(a_i . b_j / tau)_i
                       + log softmax_j(b_i . a_j / tau)_i ]

The denominators include the matched pair itself (j runs over the whole
batch, including j = i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import softmax


@dataclass
class TemperatureConfig:
    tau1: float = 0.5
    tau2: float = 0.5
    lambda_mlm: float = 0.1
    lambda_ga: float = 0.5

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("temperatures must be positive")


@dataclass
class LossValue:
    scalar: float
    components: dict[str, float] = field(default_factory=dict)


def _check_pair_batch(a, b, tau):
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if a.ndim != 2 or b.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"expected matching 2-D row batches, got {a.shape} and {b.shape}")
    if a.shape[0] < 1:
        raise ValueError("batch must contain at least one pair")


def _symmetric_infonce(a, b, tau):
    """Loss and gradients for the symmetric pair loss described above."""
    n = a.shape[0]
    s = (a @ b.T) / tau
    p = softmax(s, axis=1)  # rows of a against all b
    q = softmax(s.T, axis=1)  # rows of b against all a
    idx = np.arange(n)
    loss = -(np.log(p[idx, idx]).sum() + np.log(q[idx, idx]).sum()) / n
    eye = np.eye(n)
    ga = ((p - eye) @ b + (q - eye).T @ b) / (n * tau)
    gb = ((p - eye).T @ a + (q - eye) @ a) / (n * tau)
    return float(loss), ga, gb


def mlm_loss(logits, targets) -> LossValue:
    """Mean negative log-likelihood over the masked positions."""
    return mlm_loss_grad(logits, targets)[0]


def mlm_loss_grad(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    m = logits.shape[0]
    if m == 0:
        raise ValueError("no masked positions: MLM loss is undefined")
    if targets.shape != (m,):
        raise ValueError("targets must be one id per masked position")
    p = softmax(logits, axis=1)
    idx = np.arange(m)
    loss = float(-np.log(p[idx, targets]).mean())
    dlogits = p.copy()
    dlogits[idx, targets] -= 1.0
    dlogits /= m
    return LossValue(scalar=loss, components={"mlm": loss}), dlogits


def rsm_loss(t_findings, t_impression, tau1=0.5) -> LossValue:
    """Section-matching contrastive loss between paired section embeddings."""
    return rsm_loss_grad(t_findings, t_impression, tau1)[0]


def rsm_loss_grad(t_findings, t_impression, tau1=0.5):
    t_findings = np.asarray(t_findings, dtype=np.float64)
    t_impression = np.asarray(t_impression, dtype=np.float64)
    _check_pair_batch(t_findings, t_impression, tau1)
    loss, gf, gi = _symmetric_infonce(t_findings, t_impression, tau1)
    return LossValue(scalar=loss, components={"rsm": loss}), gf, gi


def global_alignment_loss(v_global, t_impression, tau2=0.5) -> LossValue:
    """Image-text alignment loss; same form as the section-matching loss."""
    return global_alignment_loss_grad(v_global, t_impression, tau2)[0]


def global_alignment_loss_grad(v_global, t_impression, tau2=0.5):
    v_global = np.asarray(v_global, dtype=np.float64)
    t_impression = np.asarray(t_impression, dtype=np.float64)
    _check_pair_batch(v_global, t_impression, tau2)
    loss, gv, gt = _symmetric_infonce(v_global, t_impression, tau2)
    return LossValue(scalar=loss, components={"ga": loss}), gv, gt


def simclr_loss(z, tau=0.5) -> LossValue:
    """NT-Xent over 2N augmented views; rows 2k and 2k+1 are a positive pair."""
    return simclr_loss_grad(z, tau)[0]


def simclr_loss_grad(z, tau=0.5):
    z = np.asarray(z, dtype=np.float64)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if z.ndim != 2 or z.shape[0] % 2 != 0 or z.shape[0] == 0:
        raise ValueError(f"expected an even number of view rows, got shape {z.shape}")
    m = z.shape[0]
    s = (z @ z.T) / tau
    np.fill_diagonal(s, -np.inf)
    p = softmax(s, axis=1)
    pos = np.arange(m) ^ 1
    idx = np.arange(m)
    loss = float(-np.log(p[idx, pos]).mean())
    g = p.copy()
    g[idx, pos] -= 1.0
    g /= m
    np.fill_diagonal(g, 0.0)
    dz = (g @ z + g.T @ z) / tau
    return LossValue(scalar=loss, components={"simclr": loss}), dz


def phase3_loss(mlm_logits, mlm_targets, t_findings, t_impression,
                temps: TemperatureConfig) -> LossValue:
    """Specialization-phase loss: section matching plus weighted MLM."""
    rsm = rsm_loss(t_findings, t_impression, temps.tau1)
    mlm = mlm_loss(mlm_logits, mlm_targets)
    scalar = rsm.scalar + temps.lambda_mlm * mlm.scalar
    return LossValue(scalar=scalar, components={"rsm": rsm.scalar, "mlm": mlm.scalar})


def joint_loss(mlm_logits, mlm_targets, v_global, t_impression,
               temps: TemperatureConfig) -> LossValue:
    """Joint-phase loss: weighted global alignment plus continued MLM."""
    ga = global_alignment_loss(v_global, t_impression, temps.tau2)
    mlm = mlm_loss(mlm_logits, mlm_targets)
    scalar = temps.lambda_ga * ga.scalar + mlm.scalar
    return LossValue(scalar=scalar, components={"ga": ga.scalar, "mlm": mlm.scalar})
