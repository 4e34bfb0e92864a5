"""Training orchestration: source pretraining and the adaptation loop.

The adaptation loop executes, per iteration: sample a source/target batch,
perturb both with the sign-gradient attacks, compute the combined objective
(source gaze terms on clean and perturbed images, contrastive term over all
four feature blocks, adversarial terms on the target blocks), update the
gaze network, then recompute features and update the discriminator on its
own classification loss.  Target pseudo-labels are produced once from the
incoming model and never refreshed; they steer only the attack gradients.

Everything is seeded and single-threaded deterministic: a (config, seed)
pair reproduces training bitwise on a given backend.
"""

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .attacks import AttackConfig, augment_batch
from .diffcore import Adam, SGD, NumericError, Tensor
from .losses import (
    ContrastiveBatch,
    LossWeights,
    adversarial_block_loss,
    contrastive_loss,
    discriminator_loss,
    gaze_loss,
    total_loss,
)
from .metrics import MavConfig, NoQualifyingPairs, mav, mean_angular_error
from .models import Discriminator, GazeModel


@dataclass(frozen=True)
class AdaptConfig:
    iters: int = 150
    batch: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    attack: AttackConfig = field(default_factory=AttackConfig)
    lr_g: float = 3e-4
    lr_d: float = 1e-4
    n_source: int = 100
    n_target: int = 100
    seed: int = 0
    optimizer: str = "sgd"
    verify_invariants: bool = False

    def __post_init__(self):
        if self.iters < 1 or self.batch < 1:
            raise ValueError("iters and batch must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam|sgd, got {self.optimizer!r}")
        if self.n_source < self.batch or self.n_target < self.batch:
            raise ValueError("sample pools must be at least one batch")


@dataclass
class TrainTrace:
    """Per-iteration loss records; all values are finite floats."""

    records: list = field(default_factory=list)

    def append(self, **kwargs):
        self.records.append(dict(kwargs))

    def column(self, key: str) -> list:
        return [r[key] for r in self.records]

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class ExperimentReport:
    mean_angular_error_deg: float
    mav_deg: float | None
    mav_reason: str | None
    qualifying_pairs: int | None
    candidates_scanned: int | None
    n_samples: int


def _params_hash(params: dict) -> int:
    crc = 0
    for name in sorted(params):
        crc = zlib.crc32(params[name].data.tobytes(), crc)
    return crc


def _clone_model(model: GazeModel) -> GazeModel:
    out = GazeModel(seed=0)
    src = model.named_parameters()
    for name, p in out.named_parameters().items():
        p.data = src[name].data.copy()
    return out


def pretrain(dataset, epochs: int = 30, seed: int = 0, lr: float = 1e-3,
             batch_size: int = 64):
    """Train a fresh gaze model on labeled source data; returns (model, trace).

    Mini-batch optimization of the L1 gaze loss with Adam; deterministic per
    seed (initialization, shuffling, and updates are all derived from it).
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("pretraining needs a nonempty dataset")
    model = GazeModel(seed=seed)
    opt = Adam(model.named_parameters(), lr=lr)
    trace = []
    for epoch in range(epochs):
        perm = np.random.default_rng(np.random.SeedSequence([seed, 7, epoch])).permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            x = Tensor(dataset.images[idx][:, None, :, :])
            model.zero_grad()
            loss = gaze_loss(model.predict_tensor(x), dataset.labels[idx])
            loss.backward()
            opt.step()
            val = loss.item()
            if not np.isfinite(val):
                raise NumericError(f"non-finite pretraining loss at epoch {epoch}")
            trace.append(val)
    return model, trace


def adapt(model: GazeModel, d_source, d_target, cfg: AdaptConfig):
    """Run the unsupervised adaptation loop; returns (adapted model, trace).

    The incoming model is left untouched; pools of ``n_source`` labeled
    source samples and ``n_target`` unlabeled target samples are fixed up
    front and sampled with replacement each iteration.
    """
    if len(d_source) < cfg.n_source or len(d_target) < cfg.n_target:
        raise ValueError("datasets smaller than the configured sample pools")
    model = _clone_model(model)
    src_images = d_source.images[: cfg.n_source]
    src_labels = d_source.labels[: cfg.n_source]
    tgt_images = d_target.images[: cfg.n_target]

    # freeze pseudo-labels from the incoming model; random-init discriminator
    pseudo = model.predict(tgt_images)
    pseudo_hash = zlib.crc32(pseudo.tobytes())
    disc = Discriminator(seed=cfg.seed)

    g_params = model.named_parameters()
    d_params = disc.named_parameters()
    opt_g = (Adam(g_params, lr=cfg.lr_g) if cfg.optimizer == "adam"
             else SGD(g_params, lr=cfg.lr_g))
    opt_d = Adam(d_params, lr=cfg.lr_d)
    w = cfg.weights
    b = cfg.batch
    trace = TrainTrace()

    for t in range(1, cfg.iters + 1):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11, t]))
        idx_s = rng.integers(0, cfg.n_source, size=b)
        idx_t = rng.integers(0, cfg.n_target, size=b)
        xs, ys = src_images[idx_s], src_labels[idx_s]
        xt, yt = tgt_images[idx_t], pseudo[idx_t]

        coin_s = int(np.random.default_rng(np.random.SeedSequence([cfg.seed, 12, t])).integers(2**32))
        coin_t = int(np.random.default_rng(np.random.SeedSequence([cfg.seed, 13, t])).integers(2**32))
        xs_adv = augment_batch(model, xs, ys, cfg.attack, coin_s)
        xt_adv = augment_batch(model, xt, yt, cfg.attack, coin_t)

        if cfg.verify_invariants:
            d_before = _params_hash(d_params)
            if zlib.crc32(pseudo.tobytes()) != pseudo_hash:
                raise AssertionError("pseudo-labels changed during adaptation")

        # gaze-network update on the combined objective
        model.zero_grad()
        disc.zero_grad()
        batch_images = np.concatenate([xs, xt, xs_adv, xt_adv], axis=0)
        feats = model.extract_tensor(Tensor(batch_images[:, None, :, :]))
        f_s = dc.slice_rows(feats, 0, b)
        f_t = dc.slice_rows(feats, b, 2 * b)
        f_s_adv = dc.slice_rows(feats, 2 * b, 3 * b)
        f_t_adv = dc.slice_rows(feats, 3 * b, 4 * b)
        g1 = gaze_loss(model.head(f_s), ys)
        g2 = gaze_loss(model.head(f_s_adv), ys)
        con = contrastive_loss(ContrastiveBatch(feats, b), w.tau) if w.lambda1 > 0 else 0.0
        a1 = adversarial_block_loss(disc, f_t) if w.lambda2 > 0 else 0.0
        a2 = adversarial_block_loss(disc, f_t_adv) if w.lambda2 > 0 else 0.0
        total = total_loss(g1, g2, con, a1, a2, w)
        total.backward()
        opt_g.step()

        if cfg.verify_invariants and _params_hash(d_params) != d_before:
            raise AssertionError("discriminator moved during the gaze-network step")
        if cfg.verify_invariants:
            g_after = _params_hash(g_params)

        # discriminator update on freshly computed features
        model.zero_grad()
        disc.zero_grad()
        with dc.no_grad():
            feats2 = model.extract_tensor(Tensor(batch_images[:, None, :, :])).data
        ldis = discriminator_loss(disc, feats2[:b], feats2[2 * b : 3 * b],
                                  feats2[b : 2 * b], feats2[3 * b :])
        ldis.backward()
        opt_d.step()

        if cfg.verify_invariants and _params_hash(g_params) != g_after:
            raise AssertionError("gaze network moved during the discriminator step")

        row = {
            "iter": t,
            "gaze": float(g1.item() + g2.item()),
            "con": float(con.item()) if isinstance(con, Tensor) else 0.0,
            "adv": float(a1.item() + a2.item()) if isinstance(a1, Tensor) else 0.0,
            "dis": float(ldis.item()),
            "total": float(total.item()),
        }
        if not all(np.isfinite(v) for v in row.values()):
            raise NumericError(f"non-finite loss at adaptation iteration {t}")
        trace.append(**row)
    return model, trace


def evaluate(model: GazeModel, dataset, mav_cfg: MavConfig = MavConfig()) -> ExperimentReport:
    """Side-effect-free evaluation: mean angular error plus the jitter metric.

    A dataset with no qualifying pairs yields a report with ``mav_deg`` None
    and the reason recorded, never an exception.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = model.predict(dataset.images)
    err = mean_angular_error(preds, dataset.labels)
    try:
        rep = mav(dataset, preds, mav_cfg)
        return ExperimentReport(err, rep.mav_deg, None, rep.qualifying_pairs,
                                rep.candidates_scanned, len(dataset))
    except NoQualifyingPairs as exc:
        return ExperimentReport(err, None, str(exc), None, None, len(dataset))
