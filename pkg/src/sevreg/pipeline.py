"""Three-stage orchestration: teacher regression + pseudo-labels, weakly
supervised contrastive pretraining, and weight-transfer fine-tuning.

All randomness flows from one run seed through fixed role keys, so a
(config, seed, corpus) triple maps to bit-identical checkpoints.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, RegressionStageConfig, RunConfig, Stage2Config
from .contrastive import (
    DEFAULT_TAU,
    PairingSpec,
    build_batch,
    simclr_loss,
    stage2_loss,
    with_variance,
)
from .data import (
    Corpus,
    Utterance,
    label_histogram,
    normalize_frames,
    sampler_weights,
)
from .errors import (
    FeatureFormatError,
    ParameterError,
    TrainingDivergedError,
    TransferError,
)
from .evaluation import EvalReport, evaluate_scores, write_embeddings
from .nn import AdaptorNet, backward_batch, build_net, forward_batch, huber_loss_batch
from .optim import init_optimizer, optimizer_step

logger = logging.getLogger(__name__)

# Role keys for deriving independent RNG streams from one run seed.
ROLE_MODEL_INIT = 0
ROLE_SAMPLER = 1
ROLE_DROPOUT = 2
ROLE_STAGE2_ORDER = 3
ROLE_STAGE2_AUGMENT = 4
ROLE_STAGE2_DROPOUT = 5

SCORE_MIN, SCORE_MAX = 1.0, 7.0

CKPT_MAGIC = b"DSQC"
CKPT_VERSION = 1


def role_rng(seed: int, role: int) -> np.random.Generator:
    """Independent stream for (seed, role)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(role,)))


def _prepared(utt: Utterance, mode: str) -> np.ndarray:
    """Feature matrix normalized the way the model expects (idempotent)."""
    return normalize_frames(utt.features, mode)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Named float64 parameter table plus a JSON-able metadata snapshot."""

    params: dict[str, np.ndarray]
    meta: dict


def checkpoint_from_net(
    net: AdaptorNet, stage: str, config_snapshot: dict, metrics: dict | None = None
) -> Checkpoint:
    meta = {
        "stage": stage,
        "model": {
            "feat_dim": net.feat_dim,
            "hidden_dim": net.hidden_dim,
            "out_dim": net.out_dim,
            "dropout_p": net.dropout_p,
            "pool": net.pool,
            "normalize_output": net.normalize_output,
            "feature_norm": net.feature_norm,
        },
        "config": config_snapshot,
        "metrics": metrics or {},
    }
    return Checkpoint(
        params={k: v.copy() for k, v in net.param_arrays().items()}, meta=meta
    )


def net_from_checkpoint(ckpt: Checkpoint) -> AdaptorNet:
    m = ckpt.meta["model"]
    net = build_net(
        feat_dim=m["feat_dim"],
        seed_or_rng=0,
        hidden_dim=m["hidden_dim"],
        out_dim=m["out_dim"],
        dropout_p=m["dropout_p"],
        pool=m["pool"],
        normalize_output=m["normalize_output"],
        feature_norm=m["feature_norm"],
    )
    arrays = net.param_arrays()
    for name, value in ckpt.params.items():
        arrays[name][...] = value
    return net


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Binary layout: magic, version, meta JSON, then named float64 tensors."""
    blob = bytearray()
    blob += CKPT_MAGIC
    meta_bytes = json.dumps(ckpt.meta, sort_keys=True).encode()
    blob += struct.pack("<II", CKPT_VERSION, len(meta_bytes))
    blob += meta_bytes
    names = sorted(ckpt.params)
    blob += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        name_bytes = name.encode()
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FeatureFormatError("bad magic, not a DSQC checkpoint", offset=0)
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise FeatureFormatError(f"unsupported checkpoint version {version}", offset=4)
    pos = 12
    meta = json.loads(raw[pos : pos + meta_len].decode())
    pos += meta_len
    (n_params,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    params = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        end = pos + 8 * count
        if end > len(raw):
            raise FeatureFormatError("truncated parameter payload", offset=pos)
        params[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=pos)
            .reshape(shape)
            .copy()
        )
        pos = end
    return Checkpoint(params=params, meta=meta)


# ---------------------------------------------------------------------------
# Stage 1 / Stage 3: severity regression
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    net: AdaptorNet
    history: list[dict] = field(default_factory=list)


def _regression_net(model_cfg: ModelConfig, feat_dim: int, seed: int) -> AdaptorNet:
    return build_net(
        feat_dim=feat_dim,
        seed_or_rng=role_rng(seed, ROLE_MODEL_INIT),
        hidden_dim=model_cfg.hidden_dim,
        out_dim=1,
        dropout_p=model_cfg.dropout,
        pool=model_cfg.pool,
        normalize_output=False,
        feature_norm=model_cfg.feature_norm,
    )


def train_regression(
    train: Corpus,
    val: Corpus,
    model_cfg: ModelConfig,
    stage_cfg: RegressionStageConfig,
    seed: int,
    init_trunk: dict[str, np.ndarray] | None = None,
) -> StageResult:
    """Huber regression with label-weighted sampling; returns the checkpoint
    with the best validation SRCC (the initial model if epochs == 0)."""
    feat_dim = train.utterances[0].features.shape[1]
    net = _regression_net(model_cfg, feat_dim, seed)
    if init_trunk is not None:
        arrays = net.param_arrays()
        mismatched = [
            name
            for name, value in init_trunk.items()
            if name not in arrays or arrays[name].shape != value.shape
        ]
        if mismatched:
            raise TransferError(
                f"checkpoint layers do not fit the model: {mismatched}",
                layers=mismatched,
            )
        for name, value in init_trunk.items():
            arrays[name][...] = value

    labels = train.labels()
    weights = sampler_weights(train)
    probs = weights / weights.sum()
    feats = [_prepared(u, net.feature_norm) for u in train]

    sampler = role_rng(seed, ROLE_SAMPLER)
    drop_rng = role_rng(seed, ROLE_DROPOUT)
    opt = init_optimizer(
        net.param_arrays(),
        lr=stage_cfg.lr,
        weight_decay=stage_cfg.weight_decay,
        decoupled=stage_cfg.decoupled_weight_decay,
    )

    history: list[dict] = []
    best_params = {k: v.copy() for k, v in net.param_arrays().items()}
    best_srcc = -np.inf
    n = len(train)
    for epoch in range(stage_cfg.epochs):
        order = sampler.choice(n, size=n, replace=True, p=probs)
        epoch_losses = []
        for start in range(0, n, stage_cfg.batch_size):
            idx = order[start : start + stage_cfg.batch_size]
            cache = forward_batch(
                net, [feats[i] for i in idx], training=True, rng=drop_rng
            )
            loss, dpred = huber_loss_batch(
                cache.out[:, 0], labels[idx], stage_cfg.huber_delta
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"regression loss diverged at epoch {epoch}", history=history
                )
            grads = backward_batch(net, cache, dpred[:, None])
            optimizer_step(net.param_arrays(), grads, opt)
            epoch_losses.append(loss)
        val_srcc = validation_srcc(net, val)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_srcc": val_srcc,
            }
        )
        if val_srcc is not None and val_srcc > best_srcc:
            best_srcc = val_srcc
            best_params = {k: v.copy() for k, v in net.param_arrays().items()}

    arrays = net.param_arrays()
    for name, value in best_params.items():
        arrays[name][...] = value
    return StageResult(net=net, history=history)


def validation_srcc(net: AdaptorNet, val: Corpus) -> float | None:
    """Utterance-level SRCC on a validation corpus; None when degenerate."""
    report = evaluate(net, val, level="utterance")
    return None if report.flagged else report.srcc


def train_stage1(
    train: Corpus, val: Corpus, cfg: RunConfig, seed: int | None = None
) -> StageResult:
    """Teacher regression model on the labeled subset."""
    return train_regression(
        train, val, cfg.model, cfg.stage1, cfg.seed if seed is None else seed
    )


def predict(net: AdaptorNet, corpus: Corpus, chunk: int = 256) -> np.ndarray:
    """Eval-mode severity scores, clamped to [1, 7]."""
    scores = []
    utts = corpus.utterances
    for start in range(0, len(utts), chunk):
        seqs = [_prepared(u, net.feature_norm) for u in utts[start : start + chunk]]
        out = forward_batch(net, seqs, training=False).out[:, 0]
        scores.append(out)
    return np.clip(np.concatenate(scores), SCORE_MIN, SCORE_MAX)


def pseudo_label(net: AdaptorNet, unlabeled: Corpus) -> Corpus:
    """Attach clamped predictions as labels; the input corpus is untouched."""
    if any(u.label is not None for u in unlabeled):
        raise ParameterError("pseudo_label expects an unlabeled corpus")
    scores = predict(net, unlabeled)
    utts = [
        Utterance(
            id=u.id,
            speaker_id=u.speaker_id,
            features=u.features,
            label=float(s),
            provenance="pseudo",
        )
        for u, s in zip(unlabeled, scores)
    ]
    out = Corpus(utts, name=f"{unlabeled.name}/pseudo")
    hist = label_histogram(out)
    logger.info("pseudo-label histogram: %s", hist)
    return out


# ---------------------------------------------------------------------------
# Stage 2: weakly supervised pretraining
# ---------------------------------------------------------------------------


def build_stage2_corpus(
    labeled: Corpus, pseudo: Corpus | None, typical: Corpus | None
) -> Corpus:
    """Concatenate the pretraining pools, preserving provenance.

    Dropping `typical` or `pseudo` yields the corresponding data ablations.
    """
    utts = list(labeled.utterances)
    if pseudo is not None:
        utts.extend(pseudo.utterances)
    if typical is not None:
        for u in typical:
            if u.label != 1.0:
                raise ParameterError(
                    f"typical utterance '{u.id}' must carry label 1"
                )
        utts.extend(typical.utterances)
    merged = Corpus(utts, name="stage2")
    counts = merged.counts()
    logger.info(
        "stage-2 corpus: N=%d labeled, M=%d pseudo, K=%d typical",
        counts["labeled"], counts["pseudo"], counts["typical"],
    )
    return merged


def _stage2_batches(
    corpus: Corpus,
    batch_size: int,
    typical_fraction: float | None,
    rng: np.random.Generator,
):
    """Yield index arrays for one epoch; optionally enforce a typical quota."""
    n = len(corpus)
    if typical_fraction is None:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            if len(idx) >= 2:
                yield idx
        return
    typ = np.array([i for i, u in enumerate(corpus) if u.provenance == "typical"])
    rest = np.array([i for i, u in enumerate(corpus) if u.provenance != "typical"])
    typ = typ[rng.permutation(len(typ))] if len(typ) else typ
    rest = rest[rng.permutation(len(rest))] if len(rest) else rest
    quota = int(round(typical_fraction * batch_size))
    t_pos = r_pos = 0
    while r_pos < len(rest) or t_pos < len(typ):
        take_t = min(quota, len(typ) - t_pos)
        take_r = min(batch_size - take_t, len(rest) - r_pos)
        idx = np.concatenate(
            [typ[t_pos : t_pos + take_t], rest[r_pos : r_pos + take_r]]
        ).astype(int)
        t_pos += take_t
        r_pos += take_r
        if len(idx) >= 2:
            yield rng.permutation(idx)
        if take_t == 0 and take_r == 0:
            break


def train_stage2(
    mixed: Corpus,
    model_cfg: ModelConfig,
    s2cfg: Stage2Config,
    seed: int,
    strategy: str,
) -> StageResult:
    """Train the projector for exactly s2cfg.epochs; final weights returned
    (longer training degrades, so there is no model selection)."""
    if strategy not in ("simclr", "dis", "con", "coarse", "sup"):
        raise ParameterError(f"stage 2 cannot run strategy '{strategy}'")
    labels = np.array(
        [np.nan if u.label is None else u.label for u in mixed], dtype=float
    )
    if strategy != "simclr" and np.any(np.isnan(labels)):
        raise ParameterError("weakly supervised pairing needs labels on every sample")

    feat_dim = mixed.utterances[0].features.shape[1]
    net = build_net(
        feat_dim=feat_dim,
        seed_or_rng=role_rng(seed, ROLE_MODEL_INIT),
        hidden_dim=model_cfg.hidden_dim,
        out_dim=model_cfg.embed_dim,
        dropout_p=model_cfg.dropout,
        pool=model_cfg.pool,
        normalize_output=model_cfg.normalize_embeddings,
        feature_norm=model_cfg.feature_norm,
    )
    pairing = PairingSpec(
        strategy=strategy if strategy != "simclr" else "coarse",
        alpha=s2cfg.pairing.alpha,
        beta=s2cfg.pairing.beta,
        tau=s2cfg.pairing.tau,
    )
    simclr_tau = (
        s2cfg.pairing.tau if s2cfg.pairing.tau is not None else DEFAULT_TAU["simclr"]
    )

    feats = [_prepared(u, net.feature_norm) for u in mixed]
    order_rng = role_rng(seed, ROLE_STAGE2_ORDER)
    aug_rng = role_rng(seed, ROLE_STAGE2_AUGMENT)
    drop_rng = role_rng(seed, ROLE_STAGE2_DROPOUT)
    opt = init_optimizer(
        net.param_arrays(),
        lr=s2cfg.lr,
        weight_decay=s2cfg.weight_decay,
        decoupled=False,
    )

    history: list[dict] = []
    for epoch in range(s2cfg.epochs):
        epoch_losses = []
        skipped = 0
        for idx in _stage2_batches(
            mixed, s2cfg.batch_size, s2cfg.typical_fraction, order_rng
        ):
            sources = [(feats[i], labels[i]) for i in idx]
            batch = build_batch(sources, s2cfg.augment, aug_rng)
            cache = forward_batch(net, batch.views, training=True, rng=drop_rng)
            z = cache.out
            if strategy == "simclr":
                result = with_variance(
                    simclr_loss(z, simclr_tau), z, s2cfg.gamma, s2cfg.var_weight
                )
            else:
                result = stage2_loss(z, batch, pairing, s2cfg.gamma, s2cfg.var_weight)
            if not np.isfinite(result.value):
                raise TrainingDivergedError(
                    f"stage-2 loss diverged at epoch {epoch}", history=history
                )
            skipped += result.skipped_anchors
            grads = backward_batch(net, cache, result.grad)
            optimizer_step(net.param_arrays(), grads, opt)
            epoch_losses.append(result.value)
        if skipped:
            logger.warning(
                "stage 2 epoch %d: %d anchors had no positives and were skipped",
                epoch, skipped,
            )
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                "skipped_anchors": skipped,
            }
        )
    return StageResult(net=net, history=history)


# ---------------------------------------------------------------------------
# Stage 3: transfer + fine-tune
# ---------------------------------------------------------------------------

TRANSFER_KEYS = (
    "adaptor1.weight", "adaptor1.bias", "adaptor2.weight", "adaptor2.bias",
)


def train_stage3(
    train: Corpus,
    val: Corpus,
    cfg: RunConfig,
    encoder_ckpt: Checkpoint | None,
    seed: int | None = None,
) -> StageResult:
    """Fine-tune with the first two layers seeded from a stage-2 checkpoint.

    The projection head is discarded; the fresh regression head comes from the
    same seeded stream as stage 1, so a run without a checkpoint reproduces
    stage 1 exactly.
    """
    init_trunk = None
    if encoder_ckpt is not None:
        init_trunk = {k: encoder_ckpt.params[k] for k in TRANSFER_KEYS}
    return train_regression(
        train,
        val,
        cfg.model,
        cfg.stage3,
        cfg.seed if seed is None else seed,
        init_trunk=init_trunk,
    )


# ---------------------------------------------------------------------------
# Evaluation plumbing
# ---------------------------------------------------------------------------


def evaluate(net: AdaptorNet, corpus: Corpus, level: str = "utterance") -> EvalReport:
    """predict -> (aggregate if speaker level) -> SRCC + PCC."""
    return evaluate_scores(corpus, predict(net, corpus), level=level)


def dump_embeddings(net: AdaptorNet, corpus: Corpus, path) -> None:
    """Write post-pooling vectors with labels and provenance for external
    projection tools."""
    vecs = []
    utts = corpus.utterances
    for start in range(0, len(utts), 256):
        seqs = [_prepared(u, net.feature_norm) for u in utts[start : start + 256]]
        vecs.append(forward_batch(net, seqs, training=False).pooled)
    write_embeddings(
        path,
        np.concatenate(vecs),
        [u.label for u in utts],
        [u.provenance for u in utts],
    )
