"""First-order alternating search.

Each epoch first updates the architecture weights on the validation split
(cross entropy plus the configured auxiliary loss), then updates the network
weights on the training split.  During warm-up epochs only the weight step
runs.  All randomness is drawn from generators keyed by (seed, purpose,
epoch-or-step), which makes checkpoint resume bit-exact.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .datasets import Dataset, Split, make_splits
from .errors import ContractError, SearchDiverged
from .metrics import derive, min_top2_gap
from .mixed import beta_of
from .optim import SGD, Adam, clip_grad_norm, cosine_lr
from .ops import op_cost
from .regularizers import RegularizerSpec, arch_loss, lambda_schedule
from .space import StackSpec, Supernet, build_supernet

CHECKPOINT_VERSION = 1


@dataclass
class SearchSettings:
    epochs: int = 50
    warm_up_epochs: int = 0
    batch_size: int = 64
    alpha_lr: float = 3e-4
    alpha_betas: tuple = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    w_lr: float = 2.5e-2
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    grad_clip: float = 5.0
    alpha_init: dict = field(default_factory=lambda: {"kind": "small-random"})
    partial_k: int | None = None
    use_edge_weights: bool | None = None
    split_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.warm_up_epochs < 0:
            raise ContractError("epochs and warm_up_epochs must be >= 0")
        if self.epochs and self.warm_up_epochs >= max(self.epochs, 1):
            raise ContractError(
                f"warm_up_epochs {self.warm_up_epochs} must be < epochs {self.epochs}")
        if self.alpha_lr <= 0 or self.w_lr <= 0:
            raise ContractError("learning rates must be positive")

    @property
    def edge_weights_enabled(self) -> bool:
        if self.use_edge_weights is None:
            return self.partial_k is not None
        return self.use_edge_weights


class SearchState:
    def __init__(self, space: str, stack: StackSpec, settings: SearchSettings,
                 reg: RegularizerSpec, dataset: Dataset):
        self.space = space
        self.stack = stack
        self.settings = settings
        self.reg = reg
        self.dataset = dataset

        self.supernet = build_supernet(space, stack, settings.seed,
                                       partial_k=settings.partial_k,
                                       arch_init=settings.alpha_init)
        if settings.edge_weights_enabled and self.supernet.arch.gamma is None:
            from .space import init_arch_params
            arch = init_arch_params(settings.alpha_init, self.supernet.topologies,
                                    settings.seed, with_gamma=True)
            self.supernet.arch = arch
        elif not settings.edge_weights_enabled:
            self.supernet.arch.gamma = None

        self.train_split, self.val_split = make_splits(
            dataset, settings.split_fraction, settings.seed)
        self.alpha_opt = Adam(self.supernet.arch.tensors(), settings.alpha_lr,
                              betas=tuple(settings.alpha_betas),
                              weight_decay=settings.alpha_weight_decay)
        self.w_opt = SGD(self.supernet.parameters(), settings.w_lr,
                         momentum=settings.w_momentum,
                         weight_decay=settings.w_weight_decay)
        self.epoch = 0
        self.global_step = 0
        self.trace: list[dict] = []
        self.alpha_history: list[dict] = []
        self.diverged: dict | None = None
        self.flops_costs = {
            t: np.array([op_cost(n, (stack.channels, *stack.image_hw))["mult_adds"]
                         for n in topo.candidates], dtype=np.float64)
            for t, topo in self.supernet.topologies.items()}

    # -- rng streams, all derived from (seed, purpose, counter) ---------------
    def _rng(self, purpose: int, counter: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence((self.settings.seed, purpose, counter)))

    def pc_rng(self) -> np.random.Generator | None:
        if self.settings.partial_k is None:
            return None
        return self._rng(4, self.global_step)

    def current_genotype(self):
        gamma = (None if self.supernet.arch.gamma is None else
                 {t: g.data for t, g in self.supernet.arch.gamma.items()})
        return derive({t: a.data for t, a in self.supernet.arch.alpha.items()},
                      gamma, self.supernet.topologies, space=self.space)


def _check_finite(state: SearchState, loss_value: float, phase: str):
    if not np.isfinite(loss_value):
        state.diverged = {"epoch": state.epoch, "phase": phase,
                          "loss": repr(loss_value),
                          "global_step": state.global_step}
        raise SearchDiverged(
            f"non-finite {phase} loss at epoch {state.epoch}",
            diagnostics=state.diverged)


def search_epoch(state: SearchState) -> dict:
    """Run one epoch (alpha step unless warming up, then weight step)."""
    cfg = state.settings
    e = state.epoch
    if cfg.epochs and e >= cfg.epochs:
        raise ContractError(f"epoch {e} out of schedule ({cfg.epochs})")
    lam = lambda_schedule(e, state.reg.lam)
    state.w_opt.lr = cosine_lr(cfg.w_lr, e, cfg.epochs)
    warm = e < cfg.warm_up_epochs

    val_loss_sum = val_correct = val_seen = 0.0
    n_val_batches = 0
    if not warm:
        order = state._rng(3, e)
        for xb, yb in state.val_split.iter_batches(cfg.batch_size, order,
                                                   purpose="alpha-step"):
            logits = state.supernet.forward(xb, pc_rng=state.pc_rng())
            ce = ag.cross_entropy(logits, yb)
            reg = arch_loss(state.reg, state.supernet.arch.alpha,
                            state.supernet.beta_tables(), e,
                            costs=state.flops_costs)
            loss = ag.add(ce, reg) if reg is not None else ce
            _check_finite(state, loss.item(), "validation")
            state.alpha_opt.zero_grad()
            ag.backward(loss)
            state.alpha_opt.step()
            state.global_step += 1
            val_loss_sum += ce.item() * len(yb)
            val_correct += float((logits.data.argmax(axis=1) == yb).sum())
            val_seen += len(yb)
            n_val_batches += 1
    else:
        with ag.no_grad():
            for xb, yb in state.val_split.iter_batches(cfg.batch_size,
                                                       purpose="eval"):
                logits = state.supernet.forward(xb, pc_rng=state.pc_rng())
                ce = ag.cross_entropy(logits, yb)
                val_loss_sum += ce.item() * len(yb)
                val_correct += float((logits.data.argmax(axis=1) == yb).sum())
                val_seen += len(yb)
                n_val_batches += 1

    train_loss_sum = train_seen = 0.0
    order = state._rng(5, e)
    for xb, yb in state.train_split.iter_batches(cfg.batch_size, order,
                                                 purpose="w-step"):
        logits = state.supernet.forward(xb, pc_rng=state.pc_rng())
        ce = ag.cross_entropy(logits, yb)
        _check_finite(state, ce.item(), "training")
        state.w_opt.zero_grad()
        ag.backward(ce)
        clip_grad_norm(state.w_opt.params, cfg.grad_clip)
        state.w_opt.step()
        state.global_step += 1
        train_loss_sum += ce.item() * len(yb)
        train_seen += len(yb)

    alpha_snap = {t: a.data.copy() for t, a in state.supernet.arch.alpha.items()}
    all_alpha = np.concatenate([a.reshape(-1) for a in alpha_snap.values()])
    genotype = state.current_genotype()
    row = {
        "epoch": e,
        "lambda": lam,
        "w_lr": state.w_opt.lr,
        "warm_up": int(warm),
        "train_loss": train_loss_sum / max(train_seen, 1),
        "val_loss": val_loss_sum / max(val_seen, 1),
        "val_acc": val_correct / max(val_seen, 1),
        "alpha_mean": float(all_alpha.mean()),
        "alpha_median": float(np.median(all_alpha)),
        "alpha_std": float(all_alpha.std()),
        "min_top2_gap": min(min_top2_gap(a) for a in alpha_snap.values()),
        "genotype": genotype.canonical(),
    }
    state.trace.append(row)
    state.alpha_history.append(alpha_snap)
    state.epoch += 1
    return row


@dataclass
class SearchResult:
    genotype: object
    trace: list
    alpha_history: list
    state: SearchState


def run_search(space: str, stack: StackSpec, settings: SearchSettings,
               reg: RegularizerSpec, dataset: Dataset) -> SearchResult:
    state = SearchState(space, stack, settings, reg, dataset)
    return resume_search(state)


def resume_search(state: SearchState) -> SearchResult:
    while state.epoch < state.settings.epochs:
        search_epoch(state)
    return SearchResult(genotype=state.current_genotype(), trace=state.trace,
                        alpha_history=state.alpha_history, state=state)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def _settings_digest(state: SearchState) -> str:
    doc = {"space": state.space, "stack": asdict(state.stack),
           "settings": asdict(state.settings),
           "reg": asdict(state.reg),
           "dataset": state.dataset.spec}
    return json.dumps(doc, sort_keys=True)


def save_checkpoint(state: SearchState, path) -> None:
    arrays = {}
    for i, p in enumerate(state.supernet.parameters()):
        arrays[f"w_{i:05d}"] = p.data
    for i, a in enumerate(state.supernet.arch.tensors()):
        arrays[f"arch_{i:03d}"] = a.data
    adam = state.alpha_opt.state_dict()
    for i, m in enumerate(adam["m"]):
        arrays[f"adam_m_{i:03d}"] = m
    for i, v in enumerate(adam["v"]):
        arrays[f"adam_v_{i:03d}"] = v
    sgd = state.w_opt.state_dict()
    for i, b in enumerate(sgd["buf"]):
        arrays[f"sgd_{i:05d}"] = b
    for eidx, snap in enumerate(state.alpha_history):
        for t, arr in snap.items():
            arrays[f"hist_{eidx:04d}_{t}"] = arr
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "global_step": state.global_step,
        "adam_t": adam["t"],
        "trace": state.trace,
        "digest": _settings_digest(state),
        "alpha_types": sorted(state.supernet.arch.alpha),
        "diverged": state.diverged,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    # fixed zip timestamps keep checkpoint bytes reproducible
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]),
                                      allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def restore_checkpoint(state: SearchState, path) -> SearchState:
    """Load a checkpoint into a freshly built state for the same config."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ContractError(
                f"checkpoint version {meta['version']} != {CHECKPOINT_VERSION}")
        if meta["digest"] != _settings_digest(state):
            raise ContractError("checkpoint was written for a different config")
        for i, p in enumerate(state.supernet.parameters()):
            p.data[...] = data[f"w_{i:05d}"]
        for i, a in enumerate(state.supernet.arch.tensors()):
            a.data[...] = data[f"arch_{i:03d}"]
        n_arch = len(state.supernet.arch.tensors())
        state.alpha_opt.load_state_dict({
            "t": meta["adam_t"],
            "m": [data[f"adam_m_{i:03d}"] for i in range(n_arch)],
            "v": [data[f"adam_v_{i:03d}"] for i in range(n_arch)]})
        n_w = len(state.supernet.parameters())
        state.w_opt.load_state_dict(
            {"buf": [data[f"sgd_{i:05d}"] for i in range(n_w)]})
        state.epoch = int(meta["epoch"])
        state.global_step = int(meta["global_step"])
        state.trace = list(meta["trace"])
        state.diverged = meta["diverged"]
        state.alpha_history = []
        for eidx in range(state.epoch):
            snap = {t: np.array(data[f"hist_{eidx:04d}_{t}"])
                    for t in meta["alpha_types"]}
            state.alpha_history.append(snap)
    return state
