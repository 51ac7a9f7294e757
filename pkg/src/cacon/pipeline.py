"""Two-stage training pipeline and evaluation protocols.

Stage one pretrains encoder + head contrastively on an unlabeled view of the
data (labels are structurally absent from that view, so batch composition and
checkpoints cannot depend on them). Stage two fits a linear classifier over
the frozen representation h. Protocols: rank-1 identification, pair
verification with a cross-validated cosine threshold, leave-one-image-out,
and cross-dataset transfer with a subject-overlap leakage guard.

Every report and checkpoint is stamped with the config hash and seed that
produced it, and contains no timestamps, so byte-identical reruns are the
expected behavior, not a coincidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .augment import (
    AgeTransform,
    AugmentConfig,
    AugmentedTriplet,
    Image,
    age_group_of,
    make_triplet,
    stochastic_view,
)
from .autodiff import Tape, Tensor, backward, log, scale as t_scale, sub, sum_all, sum_axis, take, tensor
from .autodiff import add as t_add, exp as t_exp
from .config import RunConfig
from .errors import (
    CaconError,
    ConfigError,
    FormatError,
    MissingImageError,
    ProtocolError,
    RunFailure,
)
from .losses import EmbeddingBatch, batch_loss, batch_loss_pair
from .manifest import SubjectRecord, read_manifest
from .model import (
    center_inputs,
    classify,
    encode,
    flatten_images,
    init_classifier,
    init_params,
    params_digest,
    project,
)
from .optim import collect_grads, lars_step, lr_schedule, sgd_step
from .synthdata import OracleAgeTransform, SynthDataset, generate
from .tensorfile import read_tensor


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    """Records plus their pixel cubes, with an optional synthesis oracle."""

    records: list
    images: list
    name: str = "dataset"
    oracle: Optional[AgeTransform] = None

    def image(self, idx: int) -> Image:
        if not (0 <= idx < len(self.records)):
            raise MissingImageError(
                f"image index {idx} out of range for dataset '{self.name}'"
            )
        return Image(self.images[idx], idx)


def dataset_from_synth(synth: SynthDataset, name: Optional[str] = None) -> Dataset:
    return Dataset(records=synth.records, images=synth.images,
                   name=name or synth.name, oracle=OracleAgeTransform(synth))


def load_dataset(dataset_dir) -> Dataset:
    """Read manifest + tensors; rebuild the synthesis oracle when present.

    A dataset.json sidecar written by gen-data carries the generator spec and
    seed; the oracle is reconstructed deterministically from them and
    integrity-checked against the first stored tensor.
    """
    root = Path(dataset_dir)
    records = read_manifest(root / "manifest.csv")
    images = []
    for rec in records:
        px = read_tensor(root / rec.path).astype(np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise FormatError(
                f"{rec.path}: image tensor must be (h, w, 3), "
                f"got {list(px.shape)}"
            )
        images.append(px)
    oracle = None
    sidecar = root / "dataset.json"
    if sidecar.exists():
        import json
        from .config import _parse_synth
        with open(sidecar) as f:
            meta = json.load(f)
        spec = _parse_synth(dict(meta.get("synth", {})))
        synth = generate(spec, int(meta["seed"]), name=root.name)
        if len(synth.records) != len(records):
            raise FormatError(
                f"{sidecar}: sidecar spec yields {len(synth.records)} images "
                f"but manifest lists {len(records)}"
            )
        if not np.array_equal(synth.images[0], images[0]):
            raise FormatError(
                f"{sidecar}: regenerated image 0 does not match stored tensor"
            )
        oracle = OracleAgeTransform(synth)
    return Dataset(records=records, images=images, name=root.name, oracle=oracle)


def split_indices(records, splits) -> list:
    want = set(splits)
    return [i for i, r in enumerate(records) if r.split in want]


@dataclass
class UnlabeledView:
    """Label-blind slice of a dataset: pixel cubes and image refs only."""

    images: list  # list[Image], each carrying its dataset ref

    def __len__(self):
        return len(self.images)


def unlabeled_view(ds: Dataset, splits) -> UnlabeledView:
    idx = split_indices(ds.records, splits)
    return UnlabeledView([ds.image(i) for i in idx])


# ---------------------------------------------------------------------------
# training stages

@dataclass
class PretrainResult:
    params: dict
    history: dict
    mode: str
    seed: int


def _loss_fn_for(mode: str):
    if mode == "cacon":
        return 3, batch_loss
    if mode == "simclr-baseline":
        return 2, batch_loss_pair
    raise ConfigError(f"unknown pretraining mode {mode!r}")


def pretrain(view: UnlabeledView, cfg: RunConfig, seed: int, mode: str,
             age_transform: Optional[AgeTransform] = None) -> PretrainResult:
    """Contrastive stage over the unlabeled view.

    cacon mode builds (view_i, view_j, synthesized view_k) triplets and
    minimizes the two-positive loss over 3B rows; simclr-baseline builds the
    usual two stochastic views and minimizes the single-positive loss over 2B
    rows. Zero epochs returns the seeded initialization unchanged.
    """
    n_views, loss_fn = _loss_fn_for(mode)
    if mode == "cacon" and age_transform is None:
        raise ConfigError(
            "pipeline.mode 'cacon' needs a synthesis oracle (dataset.json "
            "sidecar); only simclr-baseline runs on plain manifests"
        )
    n = len(view)
    if n < 2:
        raise ProtocolError(f"pretrain pool has {n} images, need at least 2")
    input_dim = view.images[0].pixels.size
    params = init_params(cfg.model, input_dim, seed)
    opt = cfg.optim.pretrain
    state: dict = {}
    epochs = cfg.pipeline.pretrain_epochs
    bsz = cfg.pipeline.pretrain_batch_size
    epoch_losses = []
    step_losses = []
    for epoch in range(epochs):
        order = rngmod.stream(seed, rngmod.SHUFFLE, epoch).permutation(n)
        lr = lr_schedule(opt.base_lr, epoch, epochs, opt.warmup_epochs)
        losses = []
        for start in range(0, n, bsz):
            chunk = order[start:start + bsz]
            if chunk.size < 2:
                continue
            step = start // bsz
            try:
                loss_val, params = _pretrain_step(
                    view, chunk, params, state, cfg, seed, epoch, mode,
                    n_views, loss_fn, age_transform, lr)
            except CaconError as e:
                raise RunFailure(
                    f"pretrain aborted at epoch {epoch} step {step}: {e}"
                ) from e
            losses.append(loss_val)
        epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
        step_losses.append(losses)
    history = {"epoch_losses": epoch_losses, "step_losses": step_losses}
    return PretrainResult(params=params, history=history, mode=mode, seed=seed)


def _pretrain_step(view, chunk, params, state, cfg, seed, epoch, mode,
                   n_views, loss_fn, age_transform, lr):
    """One batch: augment, forward, reverse sweep, optimizer update."""
    blocks = [[] for _ in range(n_views)]
    for local in chunk:
        img = view.images[int(local)]
        srng = rngmod.stream(seed, rngmod.AUGMENT, epoch, img.ref)
        if mode == "cacon":
            trip: AugmentedTriplet = make_triplet(img, cfg.augment,
                                                  age_transform, srng)
            views = (trip.view_i, trip.view_j, trip.view_k)
        else:
            views = (stochastic_view(img, cfg.augment, srng),
                     stochastic_view(img, cfg.augment, srng))
        for blk, v in zip(blocks, views):
            blk.append(v.pixels)
    x = center_inputs(flatten_images([px for blk in blocks for px in blk]))
    tape = Tape()
    xt = tensor(x)
    h = encode(xt, params, tape)
    z = project(h, params, tape)
    batch = EmbeddingBatch(z, n_sources=len(chunk), n_views=n_views)
    loss = loss_fn(batch, cfg.loss.temperature, tape)
    grads = collect_grads(params, backward(loss, tape))
    new_params = lars_step(params, grads, state, lr,
                           momentum=cfg.optim.pretrain.momentum,
                           weight_decay=cfg.optim.pretrain.weight_decay,
                           trust_coefficient=cfg.optim.pretrain.trust_coefficient)
    return loss.item(), new_params


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray,
                          tape: Optional[Tape] = None) -> Tensor:
    """Mean negative log softmax probability of the target columns."""
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    row_max = logits.data.max(axis=1)
    shift = tensor(np.broadcast_to(row_max[:, None], (n, c)).copy())
    e = t_exp(sub(logits, shift, tape), tape)
    lse = t_add(log(sum_axis(e, 1, tape), tape), tensor(row_max), tape)
    tgt = take(logits, np.arange(n) * c + targets, tape)
    return t_scale(sum_all(sub(lse, tgt, tape), tape), 1.0 / n, tape)


def _train_classifier(h: np.ndarray, y: np.ndarray, n_classes: int,
                      cfg: RunConfig, seed: int, tag: int) -> tuple[dict, dict]:
    """Linear softmax classifier over frozen features h."""
    d_h = h.shape[1]
    clf = init_classifier(d_h, n_classes, rngmod.stream(seed, rngmod.FOLD, tag, 0))
    opt = cfg.optim.finetune
    state: dict = {}
    n = h.shape[0]
    bsz = cfg.pipeline.finetune_batch_size
    epoch_losses = []
    for epoch in range(cfg.pipeline.finetune_epochs):
        order = rngmod.stream(seed, rngmod.FOLD, tag, 1 + epoch).permutation(n)
        losses = []
        for start in range(0, n, bsz):
            chunk = order[start:start + bsz]
            tape = Tape()
            hb = tensor(h[chunk])
            logits = classify(hb, clf, tape)
            loss = softmax_cross_entropy(logits, y[chunk], tape)
            grads = collect_grads(clf, backward(loss, tape))
            clf = sgd_step(clf, grads, state, opt.lr, opt.momentum)
            losses.append(loss.item())
        epoch_losses.append(float(np.mean(losses)) if losses else 0.0)
    return clf, {"epoch_losses": epoch_losses}


@dataclass
class FinetuneResult:
    clf: dict
    class_subjects: list
    history: dict
    encoder_digest: str
    seed: int


def encode_images(ds: Dataset, indices, params: dict) -> np.ndarray:
    """Frozen-encoder representations h for the given record indices."""
    if not len(indices):
        raise ProtocolError(f"no images selected from dataset '{ds.name}'")
    x = center_inputs(flatten_images([ds.images[i] for i in indices]))
    return encode(tensor(x), params).data


def finetune_linear(params: dict, ds: Dataset, cfg: RunConfig,
                    seed: int) -> FinetuneResult:
    """Stage two: fit the linear classifier on the configured labeled split.

    The encoder is frozen structurally: h enters the classifier tape as a
    leaf, so no encoder or head parameter can receive a gradient, and the
    encoder digest is unchanged by construction.
    """
    idx = split_indices(ds.records, cfg.data.finetune_splits)
    if not idx:
        raise ProtocolError(
            f"fine-tuning splits {cfg.data.finetune_splits} select no images "
            f"in dataset '{ds.name}'"
        )
    class_subjects = sorted({ds.records[i].subject_id for i in idx})
    test_idx = split_indices(ds.records, cfg.data.test_splits)
    missing = sorted({ds.records[i].subject_id for i in test_idx}
                     - set(class_subjects))
    if missing:
        raise ConfigError(
            f"classes absent from the fine-tuning split: subjects {missing}"
        )
    if len(class_subjects) < 2:
        raise ProtocolError(
            f"fine-tuning needs >= 2 subjects, got {len(class_subjects)}"
        )
    class_of = {s: k for k, s in enumerate(class_subjects)}
    h = encode_images(ds, idx, params)
    y = np.array([class_of[ds.records[i].subject_id] for i in idx])
    digest_before = params_digest(params)
    clf, history = _train_classifier(h, y, len(class_subjects), cfg, seed, tag=0)
    assert params_digest(params) == digest_before
    return FinetuneResult(clf=clf, class_subjects=class_subjects,
                          history=history, encoder_digest=digest_before,
                          seed=seed)


# ---------------------------------------------------------------------------
# evaluation protocols

@dataclass
class EvalReport:
    """One protocol outcome; serialized verbatim into report.json."""

    protocol: str
    tag: str
    accuracy_pct: float
    n_cases: int
    details: dict
    config_hash: str
    seed: int
    mode: str = ""

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "tag": self.tag,
            "accuracy_pct": self.accuracy_pct,
            "n_cases": self.n_cases,
            "details": self.details,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "mode": self.mode,
        }

    def summary_text(self) -> str:
        lines = [
            f"protocol: {self.protocol}",
            f"tag: {self.tag}",
            f"accuracy: {self.accuracy_pct:.2f}% over {self.n_cases} cases",
            f"config_hash: {self.config_hash}",
            f"seed: {self.seed}",
        ]
        if self.mode:
            lines.append(f"mode: {self.mode}")
        return "\n".join(lines) + "\n"


def eval_identification(params: dict, fit: FinetuneResult, ds: Dataset,
                        cfg: RunConfig, config_hash: str = "",
                        mode: str = "") -> EvalReport:
    """Rank-1 accuracy of the linear classifier on the test splits."""
    idx = split_indices(ds.records, cfg.data.test_splits)
    if not idx:
        raise ProtocolError(
            f"test splits {cfg.data.test_splits} select no images in "
            f"dataset '{ds.name}'"
        )
    uncovered = sorted({ds.records[i].subject_id for i in idx}
                       - set(fit.class_subjects))
    if uncovered:
        raise ProtocolError(
            f"test subjects missing from the classifier's classes: {uncovered}"
        )
    h = encode_images(ds, idx, params)
    logits = classify(tensor(h), fit.clf).data
    pred = np.asarray(fit.class_subjects)[np.argmax(logits, axis=1)]
    truth = np.array([ds.records[i].subject_id for i in idx])
    correct = pred == truth
    per_group: dict = {}
    for i, ok in zip(idx, correct):
        g = age_group_of(ds.records[i].age)
        slot = per_group.setdefault(str(g), {"n": 0, "n_correct": 0})
        slot["n"] += 1
        slot["n_correct"] += int(ok)
    for slot in per_group.values():
        slot["accuracy_pct"] = round(100.0 * slot["n_correct"] / slot["n"], 4)
    return EvalReport(
        protocol="identification", tag=ds.name,
        accuracy_pct=round(100.0 * float(correct.mean()), 4),
        n_cases=len(idx),
        details={"per_age_group": dict(sorted(per_group.items(),
                                              key=lambda kv: int(kv[0])))},
        config_hash=config_hash, seed=fit.seed, mode=mode)


def make_verification_pairs(ds: Dataset, splits, n_pairs: int,
                            rng: np.random.Generator) -> list:
    """Half same-subject, half different-subject index pairs from the splits."""
    pool = split_indices(ds.records, splits)
    if len(pool) < 2:
        raise ProtocolError(
            f"verification needs >= 2 images in splits {splits}, "
            f"got {len(pool)}"
        )
    by_subject: dict = {}
    for i in pool:
        by_subject.setdefault(ds.records[i].subject_id, []).append(i)
    multi = sorted(s for s, lst in by_subject.items() if len(lst) >= 2)
    subjects = sorted(by_subject)
    if not multi:
        raise ProtocolError("no subject has two images; cannot form positives")
    if len(subjects) < 2:
        raise ProtocolError("only one subject present; cannot form negatives")
    n_pos = n_pairs // 2
    pairs = []
    for _ in range(n_pos):
        s = multi[int(rng.integers(len(multi)))]
        a, b = rng.choice(len(by_subject[s]), size=2, replace=False)
        pairs.append((by_subject[s][int(a)], by_subject[s][int(b)], 1))
    for _ in range(n_pairs - n_pos):
        sa, sb = rng.choice(len(subjects), size=2, replace=False)
        ia = by_subject[subjects[int(sa)]]
        ib = by_subject[subjects[int(sb)]]
        pairs.append((ia[int(rng.integers(len(ia)))],
                      ib[int(rng.integers(len(ib)))], 0))
    # shuffle so the contiguous cross-validation folds mix both labels
    return [pairs[int(i)] for i in rng.permutation(len(pairs))]


def _fit_threshold(sims: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy-maximizing cosine threshold; ties take the lowest value."""
    uniq = np.sort(np.unique(sims))
    if uniq.size == 1:
        cands = np.array([uniq[0] - 1.0, uniq[0] + 1.0])
    else:
        mids = (uniq[:-1] + uniq[1:]) / 2.0
        cands = np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])
    pred = sims[None, :] >= cands[:, None]
    acc = (pred == labels[None, :].astype(bool)).mean(axis=1)
    return float(cands[int(np.argmax(acc))])


def eval_verification(params: dict, ds: Dataset, pairs, cfg: RunConfig,
                      config_hash: str = "", seed: int = 0,
                      mode: str = "") -> EvalReport:
    """Same/different decisions by thresholded cosine similarity of h.

    The threshold is cross-validated: pairs are cut into contiguous folds in
    their given order, the threshold is fit on the other folds, and accuracy
    is averaged over held-out folds.
    """
    if not pairs:
        raise ProtocolError("verification pair list is empty")
    n_rec = len(ds.records)
    for a, b, lab in pairs:
        if not (0 <= a < n_rec and 0 <= b < n_rec):
            raise MissingImageError(
                f"verification pair ({a}, {b}) references a missing image"
            )
        if lab not in (0, 1):
            raise ProtocolError(f"pair label must be 0 or 1, got {lab!r}")
    involved = sorted({i for a, b, _ in pairs for i in (a, b)})
    pos_of = {i: k for k, i in enumerate(involved)}
    h = encode_images(ds, involved, params)
    hn = h / np.linalg.norm(h, axis=1, keepdims=True)
    a_idx = np.array([pos_of[a] for a, _, _ in pairs])
    b_idx = np.array([pos_of[b] for _, b, _ in pairs])
    sims = np.sum(hn[a_idx] * hn[b_idx], axis=1)
    labels = np.array([lab for _, _, lab in pairs], dtype=bool)

    n = len(pairs)
    folds = min(cfg.pipeline.verification_folds, n)
    fold_id = (np.arange(n) * folds) // n
    fold_acc = []
    thresholds = []
    for f in range(folds):
        test = fold_id == f
        train = ~test
        thr = _fit_threshold(sims[train], labels[train]) if train.any() \
            else _fit_threshold(sims, labels)
        thresholds.append(thr)
        fold_acc.append(float(((sims[test] >= thr) == labels[test]).mean()))
    return EvalReport(
        protocol="verification", tag=ds.name,
        accuracy_pct=round(100.0 * float(np.mean(fold_acc)), 4),
        n_cases=n,
        details={
            "fold_accuracy_pct": [round(100.0 * a, 4) for a in fold_acc],
            "fold_thresholds": [round(t, 6) for t in thresholds],
            "n_folds": folds,
        },
        config_hash=config_hash, seed=seed, mode=mode)


def run_loio(params: dict, ds: Dataset, cfg: RunConfig, seed: int,
             config_hash: str = "", mode: str = "") -> EvalReport:
    """Leave-one-image-out over the configured pool with a shared encoder.

    One pretrained checkpoint serves every fold; only the linear classifier
    is refit per fold (fresh seeded init, fold index in its stream key).
    """
    pool = split_indices(ds.records, cfg.pipeline.loio_splits)
    n = len(pool)
    if n < 2:
        raise ProtocolError(
            f"leave-one-image-out needs >= 2 images, got {n}"
        )
    if n > cfg.pipeline.loio_max_folds:
        raise ProtocolError(
            f"leave-one-image-out over {n} images exceeds the fold cap "
            f"{cfg.pipeline.loio_max_folds}; subsample the pool or raise "
            f"pipeline.loio_max_folds"
        )
    subjects = [ds.records[i].subject_id for i in pool]
    counts: dict = {}
    for s in subjects:
        counts[s] = counts.get(s, 0) + 1
    lonely = sorted(s for s, c in counts.items() if c < 2)
    if lonely:
        raise ProtocolError(
            f"subjects with a single image cannot be held out: {lonely}"
        )
    class_subjects = sorted(counts)
    class_of = {s: k for k, s in enumerate(class_subjects)}
    h = encode_images(ds, pool, params)
    y = np.array([class_of[s] for s in subjects])
    errors = []
    for k in range(n):
        keep = np.arange(n) != k
        clf, _ = _train_classifier(h[keep], y[keep], len(class_subjects),
                                   cfg, seed, tag=1 + k)
        logits = classify(tensor(h[k:k + 1]), clf).data
        if int(np.argmax(logits[0])) != y[k]:
            errors.append(pool[k])
    acc = 100.0 * (n - len(errors)) / n
    return EvalReport(
        protocol="leave-one-image-out", tag=ds.name,
        accuracy_pct=round(acc, 4), n_cases=n,
        details={"n_folds": n, "misclassified_records": errors},
        config_hash=config_hash, seed=seed, mode=mode)


def _leakage_guard(source: Dataset, target: Dataset) -> None:
    """Identical datasets are a legal self-check; partial overlap is not."""
    src_ids = {r.subject_id for r in source.records}
    tgt_ids = {r.subject_id for r in target.records}
    identical = source.records == target.records
    overlap = sorted(src_ids & tgt_ids)
    if overlap and not identical:
        raise ProtocolError(
            f"source and target share {len(overlap)} subject ids "
            f"(e.g. {overlap[:5]}); cross-dataset transfer would leak"
        )


def run_cross_dataset(params: dict, source: Dataset, target: Dataset,
                      cfg: RunConfig, seed: int, config_hash: str = "",
                      mode: str = "") -> EvalReport:
    """Fine-tune on the source, evaluate on the target without target training.

    The target metric is either leave-one-out 1-NN identification in h-space
    or pair verification, per pipeline.cross_metric.
    """
    _leakage_guard(source, target)
    fit = finetune_linear(params, source, cfg, seed)
    tag = f"{source.name}=>{target.name}"
    tgt_idx = split_indices(target.records, cfg.data.test_splits)
    if not tgt_idx:
        raise ProtocolError(
            f"test splits {cfg.data.test_splits} select no images in "
            f"target dataset '{target.name}'"
        )
    if cfg.pipeline.cross_metric == "verification":
        pairs = make_verification_pairs(
            target, cfg.data.test_splits, cfg.pipeline.n_verification_pairs,
            rngmod.stream(seed, rngmod.EVAL, 1))
        rep = eval_verification(params, target, pairs, cfg,
                                config_hash=config_hash, seed=seed, mode=mode)
        details = dict(rep.details)
        details["source_classes"] = len(fit.class_subjects)
        return EvalReport(protocol="cross-dataset-verification", tag=tag,
                          accuracy_pct=rep.accuracy_pct, n_cases=rep.n_cases,
                          details=details, config_hash=config_hash,
                          seed=seed, mode=mode)

    subjects = [target.records[i].subject_id for i in tgt_idx]
    counts: dict = {}
    for s in subjects:
        counts[s] = counts.get(s, 0) + 1
    lonely = sorted(s for s, c in counts.items() if c < 2)
    if lonely:
        raise ProtocolError(
            f"1-NN transfer needs >= 2 target images per subject; "
            f"single-image subjects: {lonely}"
        )
    h = encode_images(target, tgt_idx, params)
    hn = h / np.linalg.norm(h, axis=1, keepdims=True)
    sims = hn @ hn.T
    np.fill_diagonal(sims, -np.inf)
    nn = np.argmax(sims, axis=1)
    truth = np.array(subjects)
    correct = truth[nn] == truth
    return EvalReport(
        protocol="cross-dataset-1nn", tag=tag,
        accuracy_pct=round(100.0 * float(correct.mean()), 4),
        n_cases=len(tgt_idx),
        details={"source_classes": len(fit.class_subjects)},
        config_hash=config_hash, seed=seed, mode=mode)
