"""Seeded mini-batch training loop over precomputed features."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import FeatureTable
from .errors import BatchTooLarge, InvalidConfig, NumericError, TrainAbort
from .losses import batch_loss_and_grads
from .mathops import l2_normalize_rows
from .model import StudentParams, backward, forward, init_params
from .softlabels import TeacherBatch, build_batch_targets


@dataclass
class TrainConfig:
    alpha: float = 0.5
    beta: float = 0.5
    batch_size: int = 32
    epochs: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    teacher_inv_temp: float = 1.0
    separate_uni_temp: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    d_e: int = 32
    d_u: int = 16

    def __post_init__(self):
        if self.alpha < 0.0 or self.beta < 0.0:
            raise InvalidConfig(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if self.batch_size < 2:
            raise InvalidConfig(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if not (self.learning_rate > 0.0):
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.seed < 0:
            raise InvalidConfig(f"seed must be >= 0, got {self.seed}")
        if not (self.teacher_inv_temp > 0.0):
            raise InvalidConfig(f"teacher_inv_temp must be > 0, got {self.teacher_inv_temp}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not (0.0 <= b < 1.0):
                raise InvalidConfig(f"{name} must be in [0, 1), got {b}")
        if not (self.epsilon > 0.0):
            raise InvalidConfig(f"epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay < 0.0:
            raise InvalidConfig(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.d_e < 1 or self.d_u < 1:
            raise InvalidConfig(f"d_e and d_u must be >= 1, got {self.d_e}, {self.d_u}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainData:
    """Aligned handles for one training run."""

    pairs: list
    img_base: FeatureTable
    txt_base: FeatureTable
    img_teacher: FeatureTable
    txt_teacher: FeatureTable


@dataclass
class TrainLog:
    header: dict
    records: list = field(default_factory=list)

    def write(self, path) -> None:
        """Line-delimited JSON: header first, then one record per step."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(self.header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def make_batches(n_pairs: int, batch_size: int, seed: int, epoch: int) -> list:
    """Seeded permutation of range(n_pairs) chunked into full batches.

    The trailing partial chunk is dropped. Distinct epochs draw distinct
    permutations from the same seed.
    """
    if batch_size < 1:
        raise InvalidConfig(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > n_pairs:
        raise BatchTooLarge(f"batch_size {batch_size} exceeds {n_pairs} pairs")
    perm = np.random.default_rng([seed, epoch]).permutation(n_pairs)
    n_batches = n_pairs // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


_DECAYED = ("w_img", "w_txt", "u_img", "u_txt")
_SCALARS = ("log_inv_temp", "log_inv_temp_uni")


def init_adam_state(params: StudentParams) -> AdamState:
    m = {name: np.zeros_like(getattr(params, name)) for name in _DECAYED}
    v = {name: np.zeros_like(getattr(params, name)) for name in _DECAYED}
    for name in _SCALARS:
        if getattr(params, name) is not None:
            m[name] = 0.0
            v[name] = 0.0
    return AdamState(step=0, m=m, v=v)


def adam_step(params: StudentParams, grads: StudentParams, state: AdamState,
              config: TrainConfig):
    """One bias-corrected adaptive-moment update.

    Weight decay is decoupled (applied directly to the parameter, not
    mixed into the gradient) and touches the projection matrices only.
    Returns fresh (params, state); inputs are not mutated.
    """
    t = state.step + 1
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_vals = {}, {}, {}
    for name in state.m:
        g = getattr(grads, name)
        p = getattr(params, name)
        m = state.m[name] * b1 + (1.0 - b1) * g
        v = state.v[name] * b2 + (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if name in _DECAYED and config.weight_decay != 0.0:
            p = p - lr * config.weight_decay * p
        new_m[name], new_v[name] = m, v
        new_vals[name] = p - update
    new_params = StudentParams(
        w_img=new_vals["w_img"],
        w_txt=new_vals["w_txt"],
        u_img=new_vals["u_img"],
        u_txt=new_vals["u_txt"],
        log_inv_temp=float(new_vals["log_inv_temp"]),
        log_inv_temp_uni=(float(new_vals["log_inv_temp_uni"])
                          if "log_inv_temp_uni" in new_vals else None),
    )
    return new_params, AdamState(step=t, m=new_m, v=new_v)


def train(data: TrainData, config: TrainConfig):
    """Run the full loop; returns (final StudentParams, TrainLog).

    Each step: forward -> teacher targets for the batch -> loss and
    logit gradients -> backward -> optimizer update. Teacher features
    are normalized once up front and reused. Numeric failures abort
    with (epoch, step) context.
    """
    img_ids = [p[0] for p in data.pairs]
    txt_ids = [p[1] for p in data.pairs]
    base_img = data.img_base.take(img_ids)
    base_txt = data.txt_base.take(txt_ids)
    teach_img = l2_normalize_rows(data.img_teacher.take(img_ids))
    teach_txt = l2_normalize_rows(data.txt_teacher.take(txt_ids))

    params = init_params(config.seed, base_img.shape[1], base_txt.shape[1],
                         config.d_e, config.d_u, config.separate_uni_temp)
    state = init_adam_state(params)
    log = TrainLog(header={
        "log_format": 1,
        "n_pairs": len(data.pairs),
        "cusa_threads": os.environ.get("CUSA_THREADS"),
        "config": config.to_dict(),
    })
    n_pairs = len(data.pairs)
    for epoch in range(config.epochs):
        batches = make_batches(n_pairs, config.batch_size, config.seed, epoch)
        for step, idx in enumerate(batches):
            try:
                outputs = forward(base_img[idx], base_txt[idx], params)
                targets = build_batch_targets(
                    TeacherBatch(teach_img[idx], teach_txt[idx]),
                    config.teacher_inv_temp,
                )
                report, lgrads = batch_loss_and_grads(
                    outputs, targets, config.alpha, config.beta
                )
                pgrads = backward(base_img[idx], base_txt[idx], params, lgrads)
                params, state = adam_step(params, pgrads, state, config)
            except NumericError as err:
                raise TrainAbort(epoch, step, err) from err
            log.records.append({
                "epoch": epoch,
                "step": step,
                "l_original": report.l_original,
                "l_csa": report.l_csa,
                "l_usa": report.l_usa,
                "l_total": report.l_total,
                "inv_temp": outputs.inv_temp,
            })
    return params, log
