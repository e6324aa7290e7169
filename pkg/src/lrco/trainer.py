"""Training loop: labeled source + unlabeled target, teacher-student with EMA,
confidence-split target batches, and the contrastive branches on low-confidence
samples.

Determinism contract: every random consumer derives a dedicated sub-stream
keyed by (purpose, step) or (purpose, epoch) from the run seed, so two runs
with the same config produce bit-identical parameter trajectories and metric
files, and a checkpoint-resume continues exactly where the original run was.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from .data import AugmentSpec, ShiftBenchmark, pack_inputs, pack_labels, strong_augment, weak_augment
from .errors import ConfigError, TrainingDivergedError
from .membank import MemoryBank
from .model import (
    ModelConfig, ModelState, clone_state, ema_update, features_of, init_model,
    lift_params, probs_of, state_arrays, state_from_arrays, tape_from,
)
from .numerics import SeededRng, normalize_last

METHODS = ("source_only", "baseline", "strong", "lrco", "mixlrco")
SAMPLE_SELECTIONS = ("low", "high", "all")
REREP_MODES = ("rerep", "raw", "rerep_nodetach")
MIXUP_MODES = ("dominant", "no_dominance", "high_confidence")
LOSS_KEYS = ("total", "ce", "align", "fixmatch", "kld", "contrastive")

_FMT = "{:.17g}".format


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one run. Defaults are the settings the recorded
    benchmark numbers were measured with."""

    method: str = "mixlrco"
    tau: float = 0.9
    t_ce: float = 0.05
    t_re: float | None = None
    t_co: float = 0.3
    bank_capacity: int = 512
    lambda_co: float = 0.5
    lambda_kld: float = 0.1
    lambda_align: float = 0.1
    alpha: float = 1.0
    ema_decay: float = 0.99
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_labeled: int = 32
    batch_unlabeled: int = 32
    total_steps: int = 600
    eval_interval: int = 100
    checkpoint_interval: int = 0
    seed: int = 0
    sample_selection: str = "low"
    rerep_mode: str = "rerep"
    mixup_mode: str = "dominant"
    dynamic_tau: bool = False
    tau_band: tuple[float, float] = (0.6, 0.8)
    tau_step: float = 0.005
    tau_bounds: tuple[float, float] = (0.93, 0.98)

    def resolved_t_re(self) -> float:
        return self.t_ce if self.t_re is None else self.t_re

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.sample_selection not in SAMPLE_SELECTIONS:
            raise ConfigError(f"unknown sample_selection {self.sample_selection!r}")
        if self.rerep_mode not in REREP_MODES:
            raise ConfigError(f"unknown rerep_mode {self.rerep_mode!r}")
        if self.mixup_mode not in MIXUP_MODES:
            raise ConfigError(f"unknown mixup_mode {self.mixup_mode!r}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        for name in ("t_ce", "t_co"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.resolved_t_re() > 0:
            raise ConfigError("t_re must be positive")
        if self.bank_capacity < 1:
            raise ConfigError("bank_capacity must be >= 1")
        for name in ("lambda_co", "lambda_kld", "lambda_align"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be >= 0")
        lo, hi = self.tau_band
        if not 0.0 <= lo < hi <= 1.0:
            raise ConfigError("tau_band must satisfy 0 <= low < high <= 1")
        bmin, bmax = self.tau_bounds
        if not 0.0 < bmin < bmax < 1.0:
            raise ConfigError("tau_bounds must satisfy 0 < min < max < 1")
        if not self.tau_step > 0:
            raise ConfigError("tau_step must be positive")


@dataclass(frozen=True)
class StepReport:
    """What one optimizer step did."""

    step: int
    method: str
    losses: dict[str, float]
    n_high: int
    n_low: int
    bank_size: int
    tau: float


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    per_class: dict[int, float]
    mean_confidence: float


@dataclass(frozen=True)
class MetricRecord:
    step: int
    split: str
    accuracy: float
    mean_confidence: float
    per_class: tuple[float, ...]
    losses: dict[str, float]


@dataclass
class FitResult:
    student: ModelState
    teacher: ModelState
    bank: MemoryBank
    history: list[MetricRecord]
    final_tau: float
    steps_run: int


# Step preparation -------------------------------------------------------------

@dataclass
class MixSelection:
    target_rows: np.ndarray
    source_rows: np.ndarray
    lam: np.ndarray
    lam_prime: np.ndarray
    x_mix: np.ndarray
    k_mix: np.ndarray
    k_target: np.ndarray
    k_source: np.ndarray


@dataclass
class StepBatch:
    """Every input a step consumes, with all randomness already drawn."""

    labeled_weak: np.ndarray
    labeled_y: np.ndarray
    unlabeled_weak: np.ndarray
    unlabeled_strong: np.ndarray
    pseudo: list[L.PseudoLabel]
    high_idx: np.ndarray
    low_idx: np.ndarray
    sel_idx: np.ndarray
    keys_sel: np.ndarray
    bank_snapshot: np.ndarray
    mix: MixSelection | None


def _teacher_keys(feats: np.ndarray, teacher: ModelState, cfg: TrainConfig) -> np.ndarray:
    if feats.shape[0] == 0:
        return np.zeros((0, teacher.feature_dim))
    if cfg.rerep_mode == "raw":
        return normalize_last(feats)
    return np.asarray(
        L.re_represent_batch(feats, teacher.classifier, teacher.t_re), dtype=np.float64
    )


def _student_queries(f_rows, model_like, cfg: TrainConfig, frozen_classifier=None):
    """Query vectors for the contrastive branch.

    ``frozen_classifier`` substitutes a fixed weight array for the detached
    classifier; the finite-difference harness uses it so the numeric check
    differentiates the same function the stop-gradient defines.
    """
    if cfg.rerep_mode == "raw":
        return ad.normalize_rows(f_rows)
    weight = model_like.classifier if frozen_classifier is None else frozen_classifier
    detach = cfg.rerep_mode != "rerep_nodetach"
    return L.re_represent_batch(f_rows, weight, model_like.t_re,
                                detach_weights=detach)


def prepare_step(student: ModelState, teacher: ModelState, bank: MemoryBank,
                 lab_x: np.ndarray, lab_y: np.ndarray, lab_is_source: np.ndarray,
                 unl_x: np.ndarray, cfg: TrainConfig, augment: AugmentSpec,
                 tau: float, step: int) -> StepBatch:
    """Draw views, pseudo-label with the teacher, split by confidence, and
    stage the contrastive inputs for one step."""
    base = SeededRng(cfg.seed)
    labeled_weak = weak_augment(lab_x, augment, base.substream(f"augment-labeled-{step}"))
    unl_weak = weak_augment(unl_x, augment, base.substream(f"augment-unlabeled-weak-{step}"))
    unl_strong = strong_augment(unl_x, augment, base.substream(f"augment-unlabeled-strong-{step}"))

    teacher_feats = np.asarray(features_of(teacher, unl_weak), dtype=np.float64)
    teacher_probs = np.asarray(probs_of(teacher, teacher_feats), dtype=np.float64)
    pseudo = [L.make_pseudo_label(row, tau) for row in teacher_probs]
    flags = np.array([pl.confident for pl in pseudo], dtype=bool)
    high_idx = np.flatnonzero(flags)
    low_idx = np.flatnonzero(~flags)
    if cfg.sample_selection == "low":
        sel_idx = low_idx
    elif cfg.sample_selection == "high":
        sel_idx = high_idx
    else:
        sel_idx = np.arange(len(pseudo))

    contrastive_method = cfg.method in ("lrco", "mixlrco")
    if contrastive_method:
        keys_sel = _teacher_keys(teacher_feats[sel_idx], teacher, cfg)
    else:
        keys_sel = np.zeros((0, teacher.feature_dim))
    bank_snapshot = bank.snapshot()

    mix: MixSelection | None = None
    if (cfg.method == "mixlrco" and cfg.lambda_co > 0 and len(bank_snapshot) > 0):
        target_rows = high_idx if cfg.mixup_mode == "high_confidence" else low_idx
        source_pool = np.flatnonzero(lab_is_source)
        if len(target_rows) > 0 and len(source_pool) > 0:
            mix_rng = base.substream(f"mix-{step}")
            partners = source_pool[
                np.asarray(mix_rng.integers(0, len(source_pool), size=len(target_rows)))
            ]
            dominant = cfg.mixup_mode != "no_dominance"
            draws = [L.draw_mix(cfg.alpha, mix_rng, dominant=dominant)
                     for _ in range(len(target_rows))]
            lam = np.array([d.lam for d in draws])
            lam_prime = np.array([d.lam_prime for d in draws])
            partner_strong = strong_augment(
                lab_x[partners], augment, base.substream(f"augment-mix-source-{step}")
            )
            x_mix = lam_prime[:, None] * unl_strong[target_rows] \
                + (1.0 - lam_prime)[:, None] * partner_strong
            partner_feats = np.asarray(
                features_of(teacher, labeled_weak[partners]), dtype=np.float64
            )
            k_target = _teacher_keys(teacher_feats[target_rows], teacher, cfg)
            k_source = _teacher_keys(partner_feats, teacher, cfg)
            k_mix = lam_prime[:, None] * k_target + (1.0 - lam_prime)[:, None] * k_source
            mix = MixSelection(
                target_rows=target_rows, source_rows=partners, lam=lam,
                lam_prime=lam_prime, x_mix=x_mix, k_mix=k_mix,
                k_target=k_target, k_source=k_source,
            )

    return StepBatch(
        labeled_weak=labeled_weak, labeled_y=lab_y, unlabeled_weak=unl_weak,
        unlabeled_strong=unl_strong, pseudo=pseudo, high_idx=high_idx,
        low_idx=low_idx, sel_idx=sel_idx, keys_sel=keys_sel,
        bank_snapshot=bank_snapshot, mix=mix,
    )


def _n_classes_of(model_like) -> int:
    return int(ad.value_of(model_like.classifier).shape[0])


def step_objective(model_like, sb: StepBatch, cfg: TrainConfig, *,
                   frozen_classifier=None):
    """Assemble the method's total objective for a prepared step.

    Works on a ModelState (plain evaluation) or ParamTensors (training graph).
    Returns (total, terms) where terms maps LOSS_KEYS minus "total" to scalars.
    ``frozen_classifier`` is only for the finite-difference harness.
    """
    zero = 0.0
    terms = {"ce": zero, "align": zero, "fixmatch": zero, "kld": zero,
             "contrastive": zero}

    feats_lab = features_of(model_like, sb.labeled_weak)
    probs_lab = probs_of(model_like, feats_lab)
    terms["ce"] = L.cross_entropy_batch(probs_lab, sb.labeled_y)
    total = terms["ce"]

    if cfg.method == "source_only":
        return total, terms

    # Alignment entropy over the union of labeled and unlabeled weak views,
    # computed as a sample-count weighted average of the two batch means.
    feats_unl_w = features_of(model_like, sb.unlabeled_weak)
    probs_unl_w = probs_of(model_like, feats_unl_w)
    n_l = sb.labeled_weak.shape[0]
    n_u = sb.unlabeled_weak.shape[0]
    ent_l = L.entropy_alignment(probs_lab)
    ent_u = L.entropy_alignment(probs_unl_w)
    terms["align"] = ad.add(ad.scale(ent_l, n_l / (n_l + n_u)),
                            ad.scale(ent_u, n_u / (n_l + n_u)))
    if cfg.lambda_align > 0:
        total = ad.add(total, ad.scale(terms["align"], cfg.lambda_align))

    if cfg.method == "baseline":
        return total, terms

    feats_unl_s = features_of(model_like, sb.unlabeled_strong)
    probs_unl_s = probs_of(model_like, feats_unl_s)
    if len(sb.high_idx) > 0:
        probs_high = ad.take_rows(probs_unl_s, sb.high_idx)
        hard = np.array([sb.pseudo[i].label for i in sb.high_idx], dtype=np.int64)
        terms["fixmatch"] = L.cross_entropy_batch(probs_high, hard)
        terms["kld"] = L.kld_uniform_batch(probs_high, _n_classes_of(model_like))
        total = ad.add(total, terms["fixmatch"])
        if cfg.lambda_kld > 0:
            total = ad.add(total, ad.scale(terms["kld"], cfg.lambda_kld))

    if cfg.method == "strong" or cfg.lambda_co == 0:
        return total, terms

    if cfg.method == "lrco":
        if len(sb.sel_idx) > 0 and len(sb.bank_snapshot) > 0:
            queries = _student_queries(
                ad.take_rows(feats_unl_s, sb.sel_idx), model_like, cfg,
                frozen_classifier,
            )
            terms["contrastive"] = L.contrastive_batch(
                queries, sb.keys_sel, sb.bank_snapshot, cfg.t_co
            )
            total = ad.add(total, ad.scale(terms["contrastive"], cfg.lambda_co))
        return total, terms

    # mixlrco
    if sb.mix is not None:
        feats_mix = features_of(model_like, sb.mix.x_mix)
        queries = _student_queries(feats_mix, model_like, cfg, frozen_classifier)
        terms["contrastive"] = L.mixlrco_batch(
            queries, sb.mix.k_mix, sb.mix.k_target, sb.mix.k_source,
            sb.bank_snapshot, cfg.t_co,
        )
        total = ad.add(total, ad.scale(terms["contrastive"], cfg.lambda_co))
    return total, terms


# Optimizer ---------------------------------------------------------------------

def init_velocities(state: ModelState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in state_arrays(state).items()}


def sgd_step(state: ModelState, grads: dict[str, np.ndarray],
             velocities: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """Classic momentum SGD, in place: v <- mu v + g; p <- p - lr v."""
    arrays = state_arrays(state)
    for name, arr in arrays.items():
        v = velocities[name]
        v[...] = momentum * v + grads[name]
        arr -= lr * v


# Single training step ------------------------------------------------------------

def train_step(student: ModelState, teacher: ModelState, bank: MemoryBank,
               velocities: dict[str, np.ndarray], sb: StepBatch,
               cfg: TrainConfig, tau: float, step: int) -> StepReport:
    """One optimizer step: backprop, SGD update, EMA update, bank push."""
    params = lift_params(student)
    total, terms = step_objective(params, sb, cfg)

    loss_values = {k: float(v) for k, v in terms.items()}
    loss_values["total"] = float(total)
    for key, value in loss_values.items():
        if not math.isfinite(value):
            raise TrainingDivergedError(
                f"step {step}: non-finite {key} loss ({value}); "
                f"n_high={len(sb.high_idx)} n_low={len(sb.low_idx)} "
                f"bank={len(sb.bank_snapshot)}"
            )

    if isinstance(total, ad.Tensor):
        total.backward()
    tape = tape_from(params)
    sgd_step(student, tape.as_dict(), velocities, cfg.learning_rate, cfg.momentum)
    ema_update(teacher, student, cfg.ema_decay)
    if cfg.method in ("lrco", "mixlrco") and sb.keys_sel.shape[0] > 0:
        bank.push_batch(sb.keys_sel)

    return StepReport(
        step=step, method=cfg.method, losses=loss_values,
        n_high=int(len(sb.high_idx)), n_low=int(len(sb.low_idx)),
        bank_size=len(bank), tau=tau,
    )


def adjust_tau(high_fraction: float, tau: float, cfg: TrainConfig) -> float:
    """Dynamic threshold policy: keep the high-confidence fraction inside the
    band by nudging tau, always clamped to the configured bounds."""
    if not cfg.dynamic_tau:
        return tau
    lo, hi = cfg.tau_band
    if high_fraction > hi:
        tau = tau + cfg.tau_step
    elif high_fraction < lo:
        tau = tau - cfg.tau_step
    bmin, bmax = cfg.tau_bounds
    return float(min(max(tau, bmin), bmax))


# Evaluation ----------------------------------------------------------------------

def evaluate(state: ModelState, samples) -> EvalMetrics:
    """Accuracy, per-class accuracy, and mean max-probability on labeled samples."""
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    x = pack_inputs(samples)
    y = pack_labels(samples)
    probs = np.asarray(probs_of(state, features_of(state, x)), dtype=np.float64)
    preds = np.argmax(probs, axis=1)
    accuracy = float(np.mean(preds == y))
    per_class: dict[int, float] = {}
    for c in sorted(set(int(v) for v in y)):
        mask = y == c
        per_class[c] = float(np.mean(preds[mask] == c))
    mean_confidence = float(np.mean(np.max(probs, axis=1)))
    return EvalMetrics(accuracy=accuracy, per_class=per_class,
                       mean_confidence=mean_confidence)


# Batch scheduling ------------------------------------------------------------------

class _EpochCycler:
    """Stateless batch indexing: the batch for any step is a pure function of
    (seed, purpose, step), which is what makes resume bit-exact."""

    def __init__(self, n: int, batch_size: int, seed: int, purpose: str):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seed = seed
        self.purpose = purpose
        self.batches_per_epoch = max(1, math.ceil(n / self.batch_size))
        self._cached_epoch = -1
        self._cached_perm: np.ndarray | None = None

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch != self._cached_epoch:
            stream = SeededRng(self.seed).substream(f"shuffle-{self.purpose}-{epoch}")
            self._cached_perm = stream.permutation(self.n)
            self._cached_epoch = epoch
        return self._cached_perm

    def batch_for_step(self, step: int) -> np.ndarray:
        ordinal = step - 1
        epoch = ordinal // self.batches_per_epoch
        slot = ordinal % self.batches_per_epoch
        perm = self._perm(epoch)
        return perm[slot * self.batch_size : (slot + 1) * self.batch_size]


# Metrics serialization ---------------------------------------------------------------

def metrics_header_lines(n_classes: int, config_hash: str, seed: int) -> list[str]:
    cols = ["step", "split", "accuracy", "mean_confidence"]
    cols += [f"acc_class_{c}" for c in range(n_classes)]
    cols += [f"loss_{k}" for k in LOSS_KEYS]
    return [f"# config_hash={config_hash} seed={seed}", ",".join(cols)]


def metric_record_line(rec: MetricRecord) -> str:
    parts = [str(rec.step), rec.split, _FMT(rec.accuracy), _FMT(rec.mean_confidence)]
    parts += [_FMT(v) for v in rec.per_class]
    parts += [_FMT(rec.losses[k]) for k in LOSS_KEYS]
    return ",".join(parts)


# Checkpoints ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    student: ModelState
    teacher: ModelState
    velocities: dict[str, np.ndarray]
    bank: MemoryBank
    step: int
    tau: float
    seed: int
    config_hash: str
    dynamics_hash: str = ""


def save_checkpoint(path, *, student: ModelState, teacher: ModelState,
                    velocities: dict[str, np.ndarray], bank: MemoryBank,
                    step: int, tau: float, seed: int, config_hash: str = "",
                    dynamics_hash: str = "") -> None:
    """Self-describing binary dump; round-trips bit-exactly."""
    arrays: dict[str, np.ndarray] = {}
    arrays.update(state_arrays(student, prefix="student/"))
    arrays.update(state_arrays(teacher, prefix="teacher/"))
    for name, arr in velocities.items():
        arrays[f"velocity/{name}"] = arr
    for name, arr in bank.state_arrays().items():
        arrays[name] = arr
    meta = {
        "format": 1,
        "step": int(step),
        "tau": float(tau),
        "seed": int(seed),
        "config_hash": config_hash,
        "dynamics_hash": dynamics_hash,
        "t_ce": student.t_ce,
        "t_re": student.t_re,
        "rng": {"seed": int(seed), "scheme": "per-step-substreams"},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as npz:
        arrays = {name: npz[name] for name in npz.files}
    meta = json.loads(str(arrays.pop("meta")))
    student = state_from_arrays(arrays, meta["t_ce"], meta["t_re"], prefix="student/")
    teacher = state_from_arrays(arrays, meta["t_ce"], meta["t_re"], prefix="teacher/")
    velocities = {
        name[len("velocity/"):]: np.array(arr, dtype=np.float64)
        for name, arr in arrays.items() if name.startswith("velocity/")
    }
    bank = MemoryBank.from_state_arrays(arrays)
    return Checkpoint(
        student=student, teacher=teacher, velocities=velocities, bank=bank,
        step=int(meta["step"]), tau=float(meta["tau"]), seed=int(meta["seed"]),
        config_hash=str(meta["config_hash"]),
        dynamics_hash=str(meta.get("dynamics_hash", "")),
    )


# Full fit ---------------------------------------------------------------------------------

def fit(benchmark: ShiftBenchmark, augment: AugmentSpec, cfg: TrainConfig, *,
        hidden_dims: tuple[int, ...] = (16,), feature_dim: int = 8,
        metrics_path=None, checkpoint_dir=None, resume_from=None,
        config_hash: str = "", dynamics_hash: str = "") -> FitResult:
    """Run the full training loop for one config over one benchmark.

    ``config_hash`` is an opaque stamp copied into metrics and checkpoints;
    ``dynamics_hash`` guards resume: a checkpoint carrying a different
    dynamics hash cannot continue this run.
    """
    cfg.validate()
    augment.validate()

    labeled = benchmark.labeled_pool()
    lab_x = pack_inputs(labeled)
    lab_y = pack_labels(labeled)
    lab_is_source = np.array([s.domain == "source" for s in labeled], dtype=bool)
    unl_x = pack_inputs(benchmark.target_unlabeled)
    n_classes = benchmark.spec.n_classes

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if dynamics_hash and ckpt.dynamics_hash and ckpt.dynamics_hash != dynamics_hash:
            raise ConfigError(
                "checkpoint was written by a different config "
                f"({ckpt.dynamics_hash} != {dynamics_hash})"
            )
        student, teacher = ckpt.student, ckpt.teacher
        velocities, bank = ckpt.velocities, ckpt.bank
        tau, start_step = ckpt.tau, ckpt.step
    else:
        init_rng = SeededRng(cfg.seed).substream("init")
        model_cfg = ModelConfig(
            input_dim=benchmark.spec.input_dim, hidden_dims=tuple(hidden_dims),
            feature_dim=feature_dim, n_classes=n_classes,
            t_ce=cfg.t_ce, t_re=cfg.resolved_t_re(),
        )
        student = init_model(model_cfg, init_rng)
        teacher = clone_state(student)
        velocities = init_velocities(student)
        bank = MemoryBank(cfg.bank_capacity)
        tau, start_step = cfg.tau, 0

    lab_cycler = _EpochCycler(len(labeled), cfg.batch_labeled, cfg.seed, "labeled")
    unl_cycler = _EpochCycler(len(benchmark.target_unlabeled), cfg.batch_unlabeled,
                              cfg.seed, "unlabeled")

    source_eval = benchmark.source
    target_eval = benchmark.target_eval_samples()

    history: list[MetricRecord] = []
    metrics_file = None
    if metrics_path is not None:
        metrics_file = open(metrics_path, "w", encoding="utf-8", newline="\n")
        for line in metrics_header_lines(n_classes, config_hash, cfg.seed):
            metrics_file.write(line + "\n")

    def write_record(rec: MetricRecord) -> None:
        history.append(rec)
        if metrics_file is not None:
            metrics_file.write(metric_record_line(rec) + "\n")

    def eval_both(step: int, losses: dict[str, float]) -> None:
        for split, samples in (("source", source_eval), ("target", target_eval)):
            m = evaluate(student, samples)
            per_class = tuple(m.per_class.get(c, 0.0) for c in range(n_classes))
            write_record(MetricRecord(
                step=step, split=split, accuracy=m.accuracy,
                mean_confidence=m.mean_confidence, per_class=per_class,
                losses=dict(losses),
            ))

    last_report: StepReport | None = None
    try:
        for step in range(start_step + 1, cfg.total_steps + 1):
            lab_idx = lab_cycler.batch_for_step(step)
            unl_idx = unl_cycler.batch_for_step(step)
            sb = prepare_step(
                student, teacher, bank, lab_x[lab_idx], lab_y[lab_idx],
                lab_is_source[lab_idx], unl_x[unl_idx], cfg, augment, tau, step,
            )
            report = train_step(student, teacher, bank, velocities, sb, cfg, tau, step)
            last_report = report
            n_u = len(sb.pseudo)
            tau = adjust_tau(report.n_high / n_u if n_u else 0.0, tau, cfg)

            if step % cfg.eval_interval == 0 or step == cfg.total_steps:
                eval_both(step, report.losses)
            if (checkpoint_dir is not None and cfg.checkpoint_interval > 0
                    and step % cfg.checkpoint_interval == 0 and step < cfg.total_steps):
                save_checkpoint(
                    f"{checkpoint_dir}/checkpoint_step{step}.npz",
                    student=student, teacher=teacher, velocities=velocities,
                    bank=bank, step=step, tau=tau, seed=cfg.seed,
                    config_hash=config_hash, dynamics_hash=dynamics_hash,
                )
    finally:
        if metrics_file is not None:
            metrics_file.close()

    if checkpoint_dir is not None:
        save_checkpoint(
            f"{checkpoint_dir}/checkpoint_final.npz",
            student=student, teacher=teacher, velocities=velocities, bank=bank,
            step=max(start_step, cfg.total_steps), tau=tau, seed=cfg.seed,
            config_hash=config_hash, dynamics_hash=dynamics_hash,
        )

    return FitResult(
        student=student, teacher=teacher, bank=bank, history=history,
        final_tau=tau, steps_run=max(0, cfg.total_steps - start_step),
    )
