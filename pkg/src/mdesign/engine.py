"""Refinement loop: weave benchmark gains, pick a move, evaluate, update.

Each iteration scores every unevaluated one-hop move out of the current
design by weaving per-benchmark gains (retrieved from gain graphs, or
predicted by a surrogate for OOD-flagged benchmarks) under the current
similarity view, applies the argmax move, evaluates it through a memoized
oracle, then feeds the observed gain back into the transfer models, the Bayes
posterior, the OOD flags, and the replay buffer.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import EdgeSample, GainGraph, build_graph, edge_samples, local_gains
from .planner import (
    BUFFER_CAPACITY,
    LOW_WEIGHT_FACTOR,
    PERSIST_STEPS,
    GainRegressor,
    OodFlags,
    RegressorHyper,
    ReplayBuffer,
    fine_tune,
    predict_gain,
    pretrain_regressor,
    update_ood_flags,
)
from .similarity import (
    NOISE_FLOOR,
    ObservationPair,
    SimilarityView,
    TransferModel,
    bayes_update,
    explicit_similarity,
    init_similarity_kendall,
    uniform_similarity,
    update_transfer,
)
from .space import DesignSpace, DesignTuple, Modification, apply_modification
from .store import KnowledgeStore

__all__ = [
    "EngineError",
    "SpaceExhausted",
    "EvaluationOracle",
    "FunctionOracle",
    "PlannerSettings",
    "RunConfig",
    "WovenScore",
    "RefinementState",
    "IterationRecord",
    "RefinementReport",
    "RefinementEngine",
    "initial_model",
    "weave_scores",
    "select_modification",
    "write_report",
]

DEFAULT_WINDOW = 30
DEFAULT_WINDOW_OOD = 40


class EngineError(ValueError):
    """Invalid engine configuration, state, or inputs."""


class SpaceExhausted(EngineError):
    """Every architecture reachable for continuation has been evaluated."""


# -------------------------------------------------------------------- oracle


class EvaluationOracle:
    """Memoizing evaluation capability: at most one real evaluation per design.

    Subclasses implement ``_evaluate``; ``call_count`` counts distinct designs
    and ``evaluations`` preserves first-evaluation order.
    """

    def __init__(self) -> None:
        self._memo: dict[DesignTuple, float] = {}

    def _evaluate(self, design: DesignTuple) -> float:
        raise NotImplementedError

    def evaluate(self, design: DesignTuple) -> float:
        if design in self._memo:
            return self._memo[design]
        value = float(self._evaluate(design))
        if not math.isfinite(value):
            raise EngineError(f"oracle returned non-finite performance for {design!r}")
        self._memo[design] = value
        return value

    @property
    def call_count(self) -> int:
        return len(self._memo)

    @property
    def evaluations(self) -> dict[DesignTuple, float]:
        """Evaluated designs in first-evaluation order."""
        return dict(self._memo)


class FunctionOracle(EvaluationOracle):
    """Oracle backed by a plain callable."""

    def __init__(self, fn: Callable[[DesignTuple], float]):
        super().__init__()
        self._fn = fn

    def _evaluate(self, design: DesignTuple) -> float:
        return self._fn(design)


# ------------------------------------------------------------------- configs


@dataclass(frozen=True)
class PlannerSettings:
    """Surrogate-regressor settings used when OOD adaptation is enabled."""

    hidden_dim: int = 64
    learning_rate: float = 0.02
    pretrain_epochs: int = 200
    finetune_epochs: int = 30
    max_samples: int | None = 1024
    replay_mix: float = 0.5
    buffer_capacity: int = BUFFER_CAPACITY

    def to_mapping(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "learning_rate": self.learning_rate,
            "pretrain_epochs": self.pretrain_epochs,
            "finetune_epochs": self.finetune_epochs,
            "max_samples": self.max_samples,
            "replay_mix": self.replay_mix,
            "buffer_capacity": self.buffer_capacity,
        }


@dataclass(frozen=True)
class RunConfig:
    """Everything a seeded refinement run depends on.

    ``window`` defaults to 30 when OOD adaptation is off and 40 when it is
    on; ``init_strategy`` is one of ``kendall`` (rank correlation of task
    statistics), ``uniform``, or ``explicit`` (normalized ``init_weights``).
    ``unseen_task`` names the store task replayed as the evaluation oracle in
    CLI pipelines.
    """

    budget: int = 100
    window: int | None = None
    seed: int = 0
    init_strategy: str = "kendall"
    init_weights: Mapping[str, float] | None = None
    low_weight_factor: float = LOW_WEIGHT_FACTOR
    persist_steps: int = PERSIST_STEPS
    ood_adaptation: bool = True
    dynamic_updates: bool = True
    revert_on_regress: bool = False
    noise_floor: float = NOISE_FLOOR
    unseen_task: str = "unseen"
    planner: PlannerSettings = field(default_factory=PlannerSettings)

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise EngineError("budget must be >= 0")
        if self.window is not None and self.window < 2:
            raise EngineError("window must be >= 2")
        if self.init_strategy not in ("kendall", "uniform", "explicit"):
            raise EngineError(f"unknown init_strategy {self.init_strategy!r}")
        if self.init_strategy == "explicit" and not self.init_weights:
            raise EngineError("init_strategy 'explicit' requires init_weights")
        if self.persist_steps < 1:
            raise EngineError("persist_steps must be >= 1")
        if not (math.isfinite(self.low_weight_factor) and self.low_weight_factor >= 0):
            raise EngineError("low_weight_factor must be finite and >= 0")
        if not (math.isfinite(self.noise_floor) and self.noise_floor > 0):
            raise EngineError("noise_floor must be positive")

    def resolved_window(self) -> int:
        if self.window is not None:
            return self.window
        return DEFAULT_WINDOW_OOD if self.ood_adaptation else DEFAULT_WINDOW

    def to_mapping(self) -> dict:
        return {
            "budget": self.budget,
            "window": self.window,
            "seed": self.seed,
            "init_strategy": self.init_strategy,
            "init_weights": dict(self.init_weights) if self.init_weights else None,
            "low_weight_factor": self.low_weight_factor,
            "persist_steps": self.persist_steps,
            "ood_adaptation": self.ood_adaptation,
            "dynamic_updates": self.dynamic_updates,
            "revert_on_regress": self.revert_on_regress,
            "noise_floor": self.noise_floor,
            "unseen_task": self.unseen_task,
            "planner": self.planner.to_mapping(),
        }

    @staticmethod
    def from_mapping(payload: Mapping) -> "RunConfig":
        payload = dict(payload)
        planner_part = payload.pop("planner", {}) or {}
        known_planner = {f for f in PlannerSettings.__dataclass_fields__}
        extra = set(planner_part) - known_planner
        if extra:
            raise EngineError(f"unknown planner config keys: {sorted(extra)}")
        known = {f for f in RunConfig.__dataclass_fields__ if f != "planner"}
        extra = set(payload) - known
        if extra:
            raise EngineError(f"unknown config keys: {sorted(extra)}")
        try:
            return RunConfig(planner=PlannerSettings(**planner_part), **payload)
        except TypeError as exc:
            raise EngineError(f"invalid config: {exc}") from None


# ------------------------------------------------------------------- weaving


@dataclass(frozen=True)
class WovenScore:
    """Similarity-weighted score of one candidate move.

    ``contributions`` maps each task to ``(source, value)`` where source is
    ``retrieved``, ``predicted``, or ``absent`` (value None, contributes 0).
    """

    modification: Modification
    target: DesignTuple
    score: float
    contributions: dict[str, tuple[str, float | None]]


@dataclass
class RefinementState:
    """Mutable loop state for one refinement run."""

    current: DesignTuple
    current_performance: float
    best: DesignTuple
    best_performance: float
    evaluated: dict[DesignTuple, float]
    t: int
    budget: int
    view: SimilarityView
    transfers: dict[str, TransferModel]
    flags: OodFlags
    buffer: ReplayBuffer
    log: list["IterationRecord"] = field(default_factory=list)


def initial_model(view: SimilarityView, store: KnowledgeStore) -> DesignTuple:
    """Similarity-weighted plurality vote over the benchmarks' best designs.

    Each benchmark votes, per dimension, for the choice of its best recorded
    architecture, with weight equal to its similarity; ties go to the lowest
    candidate index.
    """
    if not store.tasks:
        raise EngineError("store has no benchmark tasks")
    unknown = sorted(set(view.weights) - set(store.tasks))
    if unknown:
        raise EngineError(f"similarity view references unknown tasks: {unknown}")
    champions = {
        tid: store.arch_tuple(store.best_architecture(tid)[0]) for tid in view.weights
    }
    choices: list[int] = []
    for d in range(len(store.space.dimensions)):
        tally: dict[int, float] = defaultdict(float)
        for tid, weight in view.weights.items():
            tally[champions[tid][d]] += weight
        winner = max(tally, key=lambda c: (tally[c], -c))
        choices.append(winner)
    return tuple(choices)


def weave_scores(
    state: RefinementState,
    candidates: Sequence[tuple[Modification, DesignTuple]],
    graphs: Mapping[str, GainGraph],
    regressors: Mapping[str, GainRegressor],
    current: DesignTuple | None = None,
) -> list[WovenScore]:
    """Score candidate moves by similarity-weighted benchmark gains.

    Flagged tasks contribute surrogate predictions; unflagged tasks
    contribute retrieved gains, or nothing when the edge is unmeasured
    (``absent``: contributes 0, candidate stays eligible).  Candidates whose
    target design was already evaluated are excluded.
    """
    origin = state.current if current is None else current
    per_task_local: dict[str, dict[Modification, float | None]] = {}
    for tid in state.view.weights:
        graph = graphs.get(tid)
        per_task_local[tid] = local_gains(graph, origin) if graph is not None else {}
    out: list[WovenScore] = []
    for mod, target in candidates:
        if target in state.evaluated:
            continue
        contributions: dict[str, tuple[str, float | None]] = {}
        score = 0.0
        for tid, weight in state.view.weights.items():
            if state.flags.is_flagged(tid) and tid in regressors:
                value = predict_gain(regressors[tid], origin, target)
                contributions[tid] = ("predicted", value)
                score += weight * value
            else:
                value = per_task_local[tid].get(mod)
                if value is None:
                    contributions[tid] = ("absent", None)
                else:
                    contributions[tid] = ("retrieved", value)
                    score += weight * value
        out.append(WovenScore(mod, target, score, contributions))
    return out


def select_modification(scores: Sequence[WovenScore]) -> Modification:
    """Argmax by woven score; ties resolve to the lowest (dimension, choice)."""
    if not scores:
        raise EngineError("no unevaluated candidate modifications to select from")
    best = min(
        scores,
        key=lambda s: (-s.score, s.modification.dim, s.modification.to_choice),
    )
    return best.modification


# ------------------------------------------------------------------- reports


@dataclass(frozen=True)
class IterationRecord:
    """One report line: the executed move and the resulting state snapshot."""

    t: int
    event: str  # "initial" or "step"
    from_choices: tuple[int, ...] | None
    to_choices: tuple[int, ...]
    dimension: str | None
    from_label: str | None
    to_label: str | None
    woven_gain: float | None
    actual_gain: float | None
    performance: float
    best_performance: float
    weights: dict[str, float]
    flagged: tuple[str, ...]
    sources: dict[str, str]
    jumped: bool = False

    def to_record(self) -> dict:
        return {
            "t": self.t,
            "event": self.event,
            "from": list(self.from_choices) if self.from_choices is not None else None,
            "to": list(self.to_choices),
            "dimension": self.dimension,
            "from_choice": self.from_label,
            "to_choice": self.to_label,
            "woven_gain": self.woven_gain,
            "actual_gain": self.actual_gain,
            "performance": self.performance,
            "best_performance": self.best_performance,
            "weights": dict(self.weights),
            "flagged": list(self.flagged),
            "sources": dict(self.sources),
            "jumped": self.jumped,
        }


@dataclass(frozen=True)
class RefinementReport:
    """Outcome of one run: the best design found plus the full iteration log."""

    space_names: tuple[str, ...]
    initial_choices: tuple[int, ...]
    initial_labels: tuple[str, ...]
    initial_performance: float
    best_choices: tuple[int, ...]
    best_labels: tuple[str, ...]
    best_performance: float
    oracle_calls: int
    iterations: int
    budget: int
    config: dict
    records: tuple[IterationRecord, ...]

    def to_records(self) -> list[dict]:
        return [r.to_record() for r in self.records]

    def summary(self) -> dict:
        return {
            "dimensions": list(self.space_names),
            "initial": {
                "choices": list(self.initial_choices),
                "labels": list(self.initial_labels),
                "performance": self.initial_performance,
            },
            "best": {
                "choices": list(self.best_choices),
                "labels": list(self.best_labels),
                "performance": self.best_performance,
            },
            "oracle_calls": self.oracle_calls,
            "iterations": self.iterations,
            "budget": self.budget,
            "config": self.config,
        }

    def best_trajectory(self) -> list[float]:
        """Best-so-far performance after each evaluation (initial included)."""
        return [r.best_performance for r in self.records]


def write_report(report: RefinementReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.jsonl``, ``summary.json`` and a plot-ready ``trajectory.csv``.

    All files are deterministic functions of the report (sorted keys, no
    wall-clock content), so seeded runs reproduce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.jsonl"
    with report_path.open("w", encoding="utf-8") as fh:
        for record in report.to_records():
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(report.summary(), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    trajectory_path = out / "trajectory.csv"
    with trajectory_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "series", "value"])
        for rec in report.records:
            writer.writerow([rec.t, "performance", repr(rec.performance)])
            writer.writerow([rec.t, "best_performance", repr(rec.best_performance)])
            if rec.event == "step":
                writer.writerow([rec.t, "woven_gain", repr(rec.woven_gain)])
                writer.writerow([rec.t, "actual_gain", repr(rec.actual_gain)])
            for tid, weight in rec.weights.items():
                writer.writerow([rec.t, f"weight:{tid}", repr(weight)])
    return {"report": report_path, "summary": summary_path, "trajectory": trajectory_path}


# -------------------------------------------------------------------- engine


class RefinementEngine:
    """Drives Algorithm-style refinement of an unseen task over a benchmark store."""

    def __init__(
        self,
        store: KnowledgeStore,
        config: RunConfig = RunConfig(),
        target_stats: Mapping[str, float] | None = None,
    ):
        if not store.tasks:
            raise EngineError("store has no benchmark tasks")
        self.store = store
        self.space = store.space
        self.config = config
        self.target_stats = dict(target_stats) if target_stats is not None else None
        self.graphs: dict[str, GainGraph] = {
            tid: build_graph(store, tid) for tid in store.task_ids
        }
        self.regressors: dict[str, GainRegressor] = {}
        self._bench_samples: dict[str, list[EdgeSample]] = {}

    # ------------------------------------------------------------- lifecycle
    def _initial_view(self) -> SimilarityView:
        strategy = self.config.init_strategy
        if strategy == "uniform":
            return uniform_similarity(self.store.task_ids)
        if strategy == "explicit":
            weights = dict(self.config.init_weights or {})
            unknown = sorted(set(weights) - set(self.store.tasks))
            missing = sorted(set(self.store.tasks) - set(weights))
            if unknown or missing:
                raise EngineError(
                    f"explicit init weights mismatch store tasks: missing {missing}, unknown {unknown}"
                )
            return explicit_similarity({tid: weights[tid] for tid in self.store.task_ids})
        if self.target_stats is None:
            raise EngineError("init_strategy 'kendall' needs target task statistics")
        return init_similarity_kendall(self.target_stats, self.store)

    def new_state(self, oracle: EvaluationOracle) -> RefinementState:
        """Initialize the similarity view, evaluate the initial model, build state."""
        view = self._initial_view()
        start = initial_model(view, self.store)
        performance = oracle.evaluate(start)
        window = self.config.resolved_window()
        state = RefinementState(
            current=start,
            current_performance=performance,
            best=start,
            best_performance=performance,
            evaluated={start: performance},
            t=0,
            budget=self.config.budget,
            view=view,
            transfers={
                tid: TransferModel(window, self.config.noise_floor)
                for tid in self.store.task_ids
            },
            flags=OodFlags(self.store.task_ids),
            buffer=ReplayBuffer(self.config.planner.buffer_capacity),
        )
        state.log.append(
            IterationRecord(
                t=0,
                event="initial",
                from_choices=None,
                to_choices=start,
                dimension=None,
                from_label=None,
                to_label=None,
                woven_gain=None,
                actual_gain=None,
                performance=performance,
                best_performance=performance,
                weights=dict(view.weights),
                flagged=state.flags.flagged_tasks(),
                sources={},
            )
        )
        return state

    # ------------------------------------------------------------ regressors
    def _task_seed(self, task_id: str, salt: int = 0) -> int:
        idx = self.store.task_ids.index(task_id)
        seq = np.random.SeedSequence([abs(int(self.config.seed)), idx, salt])
        return int(seq.generate_state(1)[0])

    def _benchmark_samples(self, task_id: str) -> list[EdgeSample]:
        if task_id not in self._bench_samples:
            self._bench_samples[task_id] = edge_samples(self.graphs[task_id])
        return self._bench_samples[task_id]

    def ensure_regressor(self, task_id: str) -> GainRegressor | None:
        """Pretrain (once) the surrogate for a flagged task; None for edgeless graphs."""
        if task_id in self.regressors:
            return self.regressors[task_id]
        graph = self.graphs[task_id]
        if graph.edge_count == 0:
            return None
        settings = self.config.planner
        hyper = RegressorHyper(
            hidden_dim=settings.hidden_dim,
            learning_rate=settings.learning_rate,
            epochs=settings.pretrain_epochs,
            seed=self._task_seed(task_id),
            max_samples=settings.max_samples,
            replay_mix=settings.replay_mix,
        )
        reg, _ = pretrain_regressor(graph, hyper)
        self.regressors[task_id] = reg
        return reg

    def _finetune_hyper(self, task_id: str, step: int) -> RegressorHyper:
        settings = self.config.planner
        return RegressorHyper(
            hidden_dim=settings.hidden_dim,
            learning_rate=settings.learning_rate,
            epochs=settings.finetune_epochs,
            seed=self._task_seed(task_id, salt=step + 1),
            max_samples=settings.max_samples,
            replay_mix=settings.replay_mix,
        )

    # ------------------------------------------------------------------ step
    def _jump_target(self, state: RefinementState) -> DesignTuple:
        """Best evaluated design that still has an unevaluated neighbor."""
        eligible: list[tuple[float, DesignTuple]] = []
        for design, performance in state.evaluated.items():
            if any(nbr not in state.evaluated for _, nbr in self.space.neighbors(design)):
                eligible.append((performance, design))
        if not eligible:
            raise SpaceExhausted("every reachable architecture has been evaluated")
        top = max(p for p, _ in eligible)
        return min(d for p, d in eligible if p == top)

    def step(self, state: RefinementState, oracle: EvaluationOracle) -> RefinementState:
        """One refinement iteration; atomic (oracle failure leaves state intact)."""
        if state.t >= state.budget:
            raise EngineError("iteration budget exhausted")
        origin, origin_performance = state.current, state.current_performance
        jumped = False
        candidates = [
            c for c in self.space.neighbors(origin) if c[1] not in state.evaluated
        ]
        if not candidates:
            origin = self._jump_target(state)
            origin_performance = state.evaluated[origin]
            jumped = True
            candidates = [
                c for c in self.space.neighbors(origin) if c[1] not in state.evaluated
            ]
            if not candidates:
                raise SpaceExhausted("every reachable architecture has been evaluated")
        scores = weave_scores(state, candidates, self.graphs, self.regressors, current=origin)
        chosen_mod = select_modification(scores)
        chosen = next(s for s in scores if s.modification == chosen_mod)
        target = chosen.target
        performance = oracle.evaluate(target)  # the only fallible call; state untouched so far

        # ---- commit phase: no exceptions past this point in normal operation
        state.current, state.current_performance = origin, origin_performance
        actual_gain = performance - origin_performance
        state.evaluated[target] = performance
        if performance > state.best_performance:
            state.best, state.best_performance = target, performance
        retrieved = {tid: value for tid, (_, value) in chosen.contributions.items()}
        for tid, value in retrieved.items():
            if value is not None:
                update_transfer(state.transfers[tid], ObservationPair(actual_gain, value))
        if self.config.dynamic_updates:
            state.view = bayes_update(state.view, state.transfers, actual_gain, retrieved)
        else:
            state.view = SimilarityView(dict(state.view.weights), state.view.iteration + 1)
        if self.config.ood_adaptation:
            update_ood_flags(
                state.flags,
                state.view,
                rel_threshold=self.config.low_weight_factor,
                persist_steps=self.config.persist_steps,
            )
            for tid in state.flags.flagged_tasks():
                self.ensure_regressor(tid)
        state.buffer.append(origin, target, actual_gain)
        if self.config.ood_adaptation:
            for tid in state.flags.flagged_tasks():
                reg = self.regressors.get(tid)
                if reg is not None:
                    fine_tune(
                        reg,
                        state.buffer,
                        self._benchmark_samples(tid),
                        self._finetune_hyper(tid, state.t),
                    )
        state.t += 1
        if not (self.config.revert_on_regress and actual_gain < 0):
            state.current, state.current_performance = target, performance
        dim = self.space.dimensions[chosen_mod.dim]
        state.log.append(
            IterationRecord(
                t=state.t,
                event="step",
                from_choices=origin,
                to_choices=target,
                dimension=dim.name,
                from_label=dim.candidates[chosen_mod.from_choice],
                to_label=dim.candidates[chosen_mod.to_choice],
                woven_gain=chosen.score,
                actual_gain=actual_gain,
                performance=performance,
                best_performance=state.best_performance,
                weights=dict(state.view.weights),
                flagged=state.flags.flagged_tasks(),
                sources={tid: src for tid, (src, _) in chosen.contributions.items()},
                jumped=jumped,
            )
        )
        return state

    # ------------------------------------------------------------------- run
    def run(self, oracle: EvaluationOracle) -> RefinementReport:
        """Full budgeted run; stops early when the space is exhausted."""
        state = self.new_state(oracle)
        while state.t < state.budget and len(state.evaluated) < self.space.size:
            try:
                self.step(state, oracle)
            except SpaceExhausted:
                break
        return self.report(state, oracle)

    def report(self, state: RefinementState, oracle: EvaluationOracle) -> RefinementReport:
        return RefinementReport(
            space_names=self.space.dimension_names,
            initial_choices=state.log[0].to_choices,
            initial_labels=self.space.labels_of(state.log[0].to_choices),
            initial_performance=state.log[0].performance,
            best_choices=state.best,
            best_labels=self.space.labels_of(state.best),
            best_performance=state.best_performance,
            oracle_calls=oracle.call_count,
            iterations=state.t,
            budget=state.budget,
            config=self.config.to_mapping(),
            records=tuple(state.log),
        )
