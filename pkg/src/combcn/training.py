"""Training loop for the three strategies.

Every step draws one training video and a fresh regular hole from a random
stream seeded by ``(seed, phase, step)``, so a run is reproducible and can be
resumed from a checkpoint without replaying earlier steps.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import data
from .blocks import is_learnable, requires_grad_
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import (CSV_HEADER, LossReport, Phase, Split, Strategy,
                     TrainConfig, combine)
from .errors import EmptyDataset, VersionError
from .losses import loss_3dcn, loss_combcn
from .model import Batch, ModelBundle, make_batch

log = logging.getLogger(__name__)

_PHASE_STREAM = {Phase.PRETRAIN: 0, Phase.JOINT: 1}
_VAL_STREAM = 2


def _clean(s) -> np.ndarray:
    return s.clean if isinstance(s, data.Sample) else np.asarray(s, dtype=np.float32)


def step_batch(train_set: Sequence[np.ndarray], cfg: TrainConfig, phase: Phase,
               step: int, mean_pixel) -> Batch:
    rng = np.random.default_rng([cfg.seed, _PHASE_STREAM[phase], step])
    clip = train_set[int(rng.integers(len(train_set)))]
    mask = data.gen_regular_mask(clip.shape[0], clip.shape[1], rng,
                                 cfg.hole_lo_frac, cfg.hole_hi_frac)
    return make_batch(clip, mask, mean_pixel, cfg.variant.r)


def val_batches(val_set: Sequence[np.ndarray], cfg: TrainConfig, mean_pixel) -> list[Batch]:
    out = []
    for j, clip in enumerate(val_set[:cfg.val_samples]):
        rng = np.random.default_rng([cfg.seed, _VAL_STREAM, j])
        mask = data.gen_regular_mask(clip.shape[0], clip.shape[1], rng,
                                     cfg.hole_lo_frac, cfg.hole_hi_frac)
        out.append(make_batch(clip, mask, mean_pixel, cfg.variant.r))
    return out


def _nan() -> float:
    return float("nan")


@torch.no_grad()
def evaluate(bundle: ModelBundle, batches: Sequence[Batch], phase: Phase):
    """Mean (loss_3dcn, loss_combcn) with frozen BN statistics."""
    l3s, lcs = [], []
    for b in batches:
        g_out, out = bundle.forward(b, training=False)
        if g_out is not None:
            l3s.append(loss_3dcn(g_out, b.m_d, b.v_c_d).item())
        if phase is Phase.JOINT:
            lcs.append(loss_combcn(out, b.m, b.v_c).item())
    l3 = float(np.mean(l3s)) if l3s else _nan()
    lc = float(np.mean(lcs)) if lcs else _nan()
    return l3, lc


class Plateau:
    """Stops when the windowed mean loss improves by less than ``tol`` twice running."""

    def __init__(self, window: int, tol: float, patience: int = 2):
        self.window = window
        self.tol = tol
        self.patience = patience
        self.history: list[tuple[int, float]] = []
        self.prev: Optional[float] = None
        self.strikes = 0

    def update(self, it: int, loss: float) -> bool:
        self.history.append((it, loss))
        if it < self.window:
            return False
        recent = [v for i, v in self.history if i > it - self.window]
        cur = float(np.mean(recent))
        if self.prev is not None:
            gain = (self.prev - cur) / self.prev if self.prev > 0 else 0.0
            self.strikes = self.strikes + 1 if gain < self.tol else 0
        self.prev = cur
        return self.strikes >= self.patience

    def state(self) -> dict:
        return {"history": self.history, "prev": self.prev, "strikes": self.strikes}

    def restore(self, st: dict):
        self.history = [tuple(h) for h in st.get("history", [])]
        self.prev = st.get("prev")
        self.strikes = st.get("strikes", 0)


def _optimizer(params: Sequence[torch.Tensor], cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def _named_learnable(bundle: ModelBundle, groups: Sequence[str]) -> list[tuple[str, torch.Tensor]]:
    named = []
    if "3dcn" in groups:
        named += [(f"3dcn/{n}", t) for n, t in sorted(bundle.p3d.items()) if is_learnable(n)]
    if "combcn" in groups:
        named += [(f"combcn/{n}", t) for n, t in sorted(bundle.pcomb.items()) if is_learnable(n)]
    return named


def _optim_tensors(opt: torch.optim.Optimizer, names: list[str]) -> dict:
    out = {}
    for name, p in zip(names, opt.param_groups[0]["params"]):
        st = opt.state.get(p)
        if not st:
            continue
        out[f"optim/{name}/exp_avg"] = st["exp_avg"]
        out[f"optim/{name}/exp_avg_sq"] = st["exp_avg_sq"]
        out[f"optim/{name}/step"] = torch.as_tensor(st["step"], dtype=torch.float64).reshape(1)
    return out


def _restore_optim(opt: torch.optim.Optimizer, names: list[str], tensors: dict):
    for name, p in zip(names, opt.param_groups[0]["params"]):
        key = f"extra/optim/{name}"
        if f"{key}/exp_avg" not in tensors:
            continue
        opt.state[p] = {
            "step": tensors[f"{key}/step"].reshape(()).clone(),
            "exp_avg": tensors[f"{key}/exp_avg"].clone(),
            "exp_avg_sq": tensors[f"{key}/exp_avg_sq"].clone(),
        }


class Trainer:
    """Runs the phases of one training strategy and collects loss reports."""

    def __init__(self, train_set, val_set, cfg: TrainConfig,
                 out_dir: Optional[Path] = None,
                 on_report: Optional[Callable[[LossReport], None]] = None):
        train_set = [_clean(s) for s in train_set]
        if not train_set:
            raise EmptyDataset("training set is empty")
        self.train_set = train_set
        self.val_set = [_clean(s) for s in (val_set or [])]
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.on_report = on_report
        self.reports: list[LossReport] = []
        mean = cfg.mean_pixel or data.mean_pixel(train_set)
        self.mean_pixel = tuple(mean)
        cfg.mean_pixel = self.mean_pixel
        self.bundle = ModelBundle.create(cfg.variant, cfg.reduced, cfg.seed,
                                         fusion=cfg.fusion, mean_pixel=self.mean_pixel)
        self.val = val_batches(self.val_set, cfg, self.mean_pixel)
        self.phase = Phase.PRETRAIN
        self.start_iter = 0
        self.plateau = Plateau(cfg.converge_window, cfg.converge_tol)
        self._optim_state: dict = {}

    # -- phase plumbing ----------------------------------------------------

    def phases(self) -> list[Phase]:
        if self.cfg.strategy is Strategy.T2 or not self.cfg.fusion:
            return [Phase.JOINT]
        return [Phase.PRETRAIN, Phase.JOINT]

    def groups(self, phase: Phase) -> tuple[str, ...]:
        if phase is Phase.PRETRAIN:
            return ("3dcn",)
        if self.cfg.strategy is Strategy.T1 or not self.cfg.fusion:
            return ("combcn",)
        return ("3dcn", "combcn")

    def iters(self, phase: Phase) -> int:
        return self.cfg.pretrain_iters if phase is Phase.PRETRAIN else self.cfg.joint_iters

    def _emit(self, rep: LossReport):
        self.reports.append(rep)
        if self.on_report is not None:
            self.on_report(rep)

    # -- steps -------------------------------------------------------------

    def _loss(self, phase: Phase, batch: Batch):
        b = self.bundle
        if phase is Phase.PRETRAIN:
            g_out = b.run_3dcn(batch, training=True)
            l3 = loss_3dcn(g_out, batch.m_d, batch.v_c_d)
            return l3, l3, None
        if not self.cfg.fusion:
            out = b.run_combcn(batch, None, training=True)
            lc = loss_combcn(out, batch.m, batch.v_c)
            return self.cfg.alpha * lc, None, lc
        if self.cfg.strategy is Strategy.T1:
            # frozen guidance network: running statistics are left untouched
            with torch.no_grad():
                g_out = b.run_3dcn(batch, training=False)
        else:
            g_out = b.run_3dcn(batch, training=True)
        l3 = loss_3dcn(g_out, batch.m_d, batch.v_c_d)
        out = b.run_combcn(batch, g_out, training=True)
        lc = loss_combcn(out, batch.m, batch.v_c)
        return l3 + self.cfg.alpha * lc, l3, lc

    def run(self) -> tuple[ModelBundle, list[LossReport]]:
        cfg = self.cfg
        phases = self.phases()
        for phase in phases[phases.index(self.phase) if self.phase in phases else 0:]:
            self.phase = phase
            self._run_phase(phase)
            self.start_iter = 0
            self._optim_state = {}
            if phase is Phase.PRETRAIN and self.out_dir is not None:
                self.save(self.out_dir / "pretrain.ckpt", phase, self.iters(phase))
        requires_grad_(self.bundle.p3d, False)
        requires_grad_(self.bundle.pcomb, False)
        if self.out_dir is not None:
            self.save(self.out_dir / "final.ckpt", Phase.JOINT, cfg.joint_iters, done=True)
        return self.bundle, self.reports

    def _run_phase(self, phase: Phase):
        cfg = self.cfg
        groups = self.groups(phase)
        requires_grad_(self.bundle.p3d, "3dcn" in groups)
        requires_grad_(self.bundle.pcomb, "combcn" in groups)
        named = _named_learnable(self.bundle, groups)
        names = [n for n, _ in named]
        opt = _optimizer([t for _, t in named], cfg)
        if self._optim_state:
            _restore_optim(opt, names, self._optim_state)
        total = self.iters(phase)
        log.info("phase %s: %d iterations over %s", phase.value, total, ",".join(groups))

        for it in range(self.start_iter + 1, total + 1):
            batch = step_batch(self.train_set, cfg, phase, it, self.mean_pixel)
            opt.zero_grad(set_to_none=True)
            loss, l3, lc = self._loss(phase, batch)
            loss.backward()
            opt.step()

            if it % cfg.log_every == 0 or it == total:
                l3v = l3.item() if l3 is not None else _nan()
                lcv = lc.item() if lc is not None else _nan()
                self._emit(LossReport(it, phase, Split.TRAIN, l3v, lcv,
                                      combine(l3v, lcv, cfg.alpha)))
            stop = False
            if self.val and (it % cfg.eval_every == 0 or it == total):
                v3, vc = evaluate(self.bundle, self.val, phase)
                self._emit(LossReport(it, phase, Split.VAL, v3, vc, combine(v3, vc, cfg.alpha)))
                if phase is Phase.PRETRAIN:
                    stop = self.plateau.update(it, v3)
            if self.out_dir is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                self.save(self.out_dir / "latest.ckpt", phase, it, opt=opt, names=names)
            if stop:
                log.info("pre-training converged at iteration %d", it)
                break

    # -- checkpoints -------------------------------------------------------

    def save(self, path: Path, phase: Phase, it: int, opt=None, names=None, done=False):
        meta = {"phase": phase.value, "phase_iter": it, "done": done,
                "frame_size": int(self.train_set[0].shape[1]),
                "frames": int(self.train_set[0].shape[0]),
                "plateau": self.plateau.state()}
        extra = _optim_tensors(opt, names) if opt is not None else None
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.bundle, self.cfg, it, path, meta=meta, extra=extra)

    def resume(self, path) -> None:
        doc = read_checkpoint(path)
        bundle, cfg, it = load_checkpoint(path, expect_variant=self.cfg.variant)
        if bundle.reduced != self.cfg.reduced or bundle.fusion != self.cfg.fusion:
            raise VersionError(f"{path}: network layout differs from the current config")
        self.bundle = bundle
        self.mean_pixel = bundle.mean_pixel
        self.cfg.mean_pixel = bundle.mean_pixel
        meta = doc["meta"]
        self.phase = Phase(meta.get("phase", Phase.JOINT.value))
        self.start_iter = int(meta.get("phase_iter", it))
        self.plateau.restore(meta.get("plateau", {}))
        self._optim_state = {k: v for k, v in doc["tensors"].items() if k.startswith("extra/optim/")}
        if meta.get("done"):
            self.phase, self.start_iter = Phase.JOINT, self.cfg.joint_iters
        elif self.phase is Phase.PRETRAIN and self.start_iter >= self.cfg.pretrain_iters:
            self.phase, self.start_iter = Phase.JOINT, 0
        self.val = val_batches(self.val_set, self.cfg, self.mean_pixel)


def train(train_set, val_set, cfg: TrainConfig, out_dir=None, resume=None,
          on_report=None) -> tuple[ModelBundle, list[LossReport]]:
    """Train per ``cfg.strategy``; returns the final model and its loss reports."""
    trainer = Trainer(train_set, val_set, cfg, out_dir=out_dir, on_report=on_report)
    if resume is not None:
        trainer.resume(resume)
    return trainer.run()


def write_reports_csv(path, reports: Sequence[LossReport], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.row())


def reduction(reports: Sequence[LossReport], start: int, end: int,
              phase: Phase = Phase.JOINT, split: Split = Split.TRAIN) -> float:
    """Fractional drop of loss_total between two logged iterations."""
    by_iter = {r.iter: r.loss_total for r in reports if r.phase is phase and r.split is split}
    a, b = by_iter[start], by_iter[end]
    if not math.isfinite(a) or a == 0:
        raise ValueError(f"no usable loss at iteration {start}")
    return 1.0 - b / a
