"""Finite-difference verification of every loss term and training objective.

Each randomized instance builds a tiny model pair (student + independent
teacher), a prepared step batch, and compares reverse-mode gradients against
central finite differences over the full parameter vector. Terms whose
re-representation weights are stop-gradients are checked against the function
with those weights frozen — the function the analytic gradient actually
differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import losses as L
from .data import AugmentSpec, weak_augment
from .membank import MemoryBank
from .model import (
    ModelConfig, compute_gradients, features_of, get_param_vector, init_model,
    probs_of, with_param_vector,
)
from .numerics import SeededRng, finite_diff_grad, relative_grad_error, normalize_last
from .trainer import TrainConfig, prepare_step, step_objective

TERM_NAMES = (
    "labeled_ce",
    "alignment_entropy",
    "fixmatch",
    "uniform_kld",
    "contrastive_rerep",
    "contrastive_raw",
    "contrastive_mix",
    "objective_strong",
    "objective_lrco",
    "objective_mixlrco",
)

_SIZE_GRID = ((2, 3), (2, 8), (5, 3), (5, 8))  # (n_classes, feature_dim)


@dataclass(frozen=True)
class InstanceResult:
    index: int
    n_classes: int
    feature_dim: int
    errors: dict[str, float]


def _split_tau(maxprobs: np.ndarray) -> float:
    """A threshold strictly between the extremes, so both groups are nonempty."""
    lo, hi = float(maxprobs.min()), float(maxprobs.max())
    if hi - lo < 1e-12:
        return 0.5
    return 0.5 * (lo + hi)


def _build_instance(index: int, seed: int):
    n_classes, feature_dim = _SIZE_GRID[index % len(_SIZE_GRID)]
    rng = SeededRng(seed).substream(f"gradcheck-{index}")

    t_ce = 0.3 + 0.7 * float(rng.uniform())
    t_co = 0.2 + 0.3 * float(rng.uniform())
    model_cfg = ModelConfig(
        input_dim=3, hidden_dims=(4,), feature_dim=feature_dim,
        n_classes=n_classes, t_ce=t_ce, t_re=t_ce,
    )
    student = init_model(model_cfg, rng.substream("student"))
    teacher = init_model(model_cfg, rng.substream("teacher"))

    n_lab, n_unl = 4, 6
    lab_x = np.asarray(rng.normal(size=(n_lab, 3)))
    lab_y = np.asarray(rng.integers(0, n_classes, size=n_lab), dtype=np.int64)
    lab_src = np.ones(n_lab, dtype=bool)
    unl_x = np.asarray(rng.normal(size=(n_unl, 3)))

    bank = MemoryBank(capacity=16)
    bank.push_batch(normalize_last(np.asarray(rng.normal(size=(5, feature_dim)))))

    augment = AugmentSpec()
    base_cfg = TrainConfig(
        method="lrco", t_ce=t_ce, t_re=t_ce, t_co=t_co,
        bank_capacity=16, seed=int(seed * 1000 + index),
        sample_selection="low", rerep_mode="rerep",
    )

    def tau_for(step: int) -> float:
        weak = weak_augment(
            unl_x, augment,
            SeededRng(base_cfg.seed).substream(f"augment-unlabeled-weak-{step}"),
        )
        probs = np.asarray(probs_of(teacher, features_of(teacher, weak)))
        return _split_tau(probs.max(axis=1))

    def prep(cfg: TrainConfig, step: int):
        return prepare_step(student, teacher, bank, lab_x, lab_y, lab_src,
                            unl_x, cfg, augment, tau_for(step), step)

    cfg_rerep = base_cfg
    cfg_raw = replace(base_cfg, rerep_mode="raw")
    cfg_mix = replace(base_cfg, method="mixlrco")
    cfg_strong = replace(base_cfg, method="strong")

    sb_rerep = prep(cfg_rerep, 1)
    sb_raw = prep(cfg_raw, 2)
    sb_mix = prep(cfg_mix, 3)

    return {
        "student": student,
        "teacher": teacher,
        "n_classes": n_classes,
        "feature_dim": feature_dim,
        "cfgs": {"rerep": cfg_rerep, "raw": cfg_raw, "mix": cfg_mix,
                 "strong": cfg_strong},
        "batches": {"rerep": sb_rerep, "raw": sb_raw, "mix": sb_mix},
        "frozen_classifier": student.classifier.copy(),
    }


def _term_functions(inst) -> dict[str, object]:
    """Map term name -> loss_fn(model_like) -> scalar (array or tensor)."""
    sb_rerep = inst["batches"]["rerep"]
    sb_raw = inst["batches"]["raw"]
    sb_mix = inst["batches"]["mix"]
    cfgs = inst["cfgs"]
    frozen = inst["frozen_classifier"]
    n_classes = inst["n_classes"]

    def labeled_ce(m):
        return L.cross_entropy_batch(probs_of(m, features_of(m, sb_rerep.labeled_weak)),
                                     sb_rerep.labeled_y)

    def alignment_entropy(m):
        return L.entropy_alignment(probs_of(m, features_of(m, sb_rerep.unlabeled_weak)))

    def fixmatch(m):
        if len(sb_rerep.high_idx) == 0:
            return 0.0
        probs = probs_of(m, features_of(m, sb_rerep.unlabeled_strong))
        picked = ad.take_rows(probs, sb_rerep.high_idx)
        hard = np.array([sb_rerep.pseudo[i].label for i in sb_rerep.high_idx],
                        dtype=np.int64)
        return L.cross_entropy_batch(picked, hard)

    def uniform_kld(m):
        if len(sb_rerep.high_idx) == 0:
            return 0.0
        probs = probs_of(m, features_of(m, sb_rerep.unlabeled_strong))
        return L.kld_uniform_batch(ad.take_rows(probs, sb_rerep.high_idx), n_classes)

    def contrastive_rerep(m):
        if len(sb_rerep.sel_idx) == 0:
            return 0.0
        feats = features_of(m, sb_rerep.unlabeled_strong)
        q = L.re_represent_batch(ad.take_rows(feats, sb_rerep.sel_idx), frozen,
                                 cfgs["rerep"].resolved_t_re())
        return L.contrastive_batch(q, sb_rerep.keys_sel, sb_rerep.bank_snapshot,
                                   cfgs["rerep"].t_co)

    def contrastive_raw(m):
        if len(sb_raw.sel_idx) == 0:
            return 0.0
        feats = features_of(m, sb_raw.unlabeled_strong)
        q = ad.normalize_rows(ad.take_rows(feats, sb_raw.sel_idx))
        return L.contrastive_batch(q, sb_raw.keys_sel, sb_raw.bank_snapshot,
                                   cfgs["raw"].t_co)

    def contrastive_mix(m):
        mix = sb_mix.mix
        if mix is None:
            return 0.0
        feats = features_of(m, mix.x_mix)
        q = L.re_represent_batch(feats, frozen, cfgs["mix"].resolved_t_re())
        return L.mixlrco_batch(q, mix.k_mix, mix.k_target, mix.k_source,
                               sb_mix.bank_snapshot, cfgs["mix"].t_co)

    def objective_strong(m):
        total, _ = step_objective(m, sb_rerep, cfgs["strong"])
        return total

    def objective_lrco(m):
        total, _ = step_objective(m, sb_rerep, cfgs["rerep"],
                                  frozen_classifier=frozen)
        return total

    def objective_mixlrco(m):
        total, _ = step_objective(m, sb_mix, cfgs["mix"],
                                  frozen_classifier=frozen)
        return total

    return {
        "labeled_ce": labeled_ce,
        "alignment_entropy": alignment_entropy,
        "fixmatch": fixmatch,
        "uniform_kld": uniform_kld,
        "contrastive_rerep": contrastive_rerep,
        "contrastive_raw": contrastive_raw,
        "contrastive_mix": contrastive_mix,
        "objective_strong": objective_strong,
        "objective_lrco": objective_lrco,
        "objective_mixlrco": objective_mixlrco,
    }


def check_instance(index: int, seed: int = 0, h: float = 1e-5) -> InstanceResult:
    inst = _build_instance(index, seed)
    student = inst["student"]
    base_vec = get_param_vector(student)
    errors: dict[str, float] = {}
    for name, loss_fn in _term_functions(inst).items():
        analytic = compute_gradients(student, loss_fn).flatten()

        def scalar_at(vec: np.ndarray) -> float:
            value = loss_fn(with_param_vector(student, vec))
            return float(ad.value_of(value))

        numeric = finite_diff_grad(scalar_at, base_vec, h=h)
        errors[name] = relative_grad_error(analytic, numeric)
    return InstanceResult(index=index, n_classes=inst["n_classes"],
                          feature_dim=inst["feature_dim"], errors=errors)


def run_gradient_suite(seed: int = 0, n_instances: int = 20,
                       h: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error per term over randomized instances."""
    worst = {name: 0.0 for name in TERM_NAMES}
    for index in range(n_instances):
        result = check_instance(index, seed=seed, h=h)
        for name, err in result.errors.items():
            worst[name] = max(worst[name], err)
    return worst
