"""Search orchestration: the epoch/step loop, set algebra combining both
agents' action sequences, best-set tracking, ablation variants and the
feature-order report.

Each epoch restarts from the original feature set (an episode of K chained
steps); the best-scoring set seen anywhere is tracked globally.  A
``chain_epochs`` flag keeps the working set across epochs instead.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .agents import (BATCH_SIZE, DiscriminationAgent, EpsilonSchedule,
                     GenerationAgent, OpChoice, StateView, Transition)
from .embedding import EncodingConfig, state_inputs
from .errors import ConfigError
from .evaluator import CachedEvaluator, LearnerConfig, default_metric
from .mutualinfo import mutual_information
from .rewards import (RewardBreakdown, RewardWeights, discrimination_reward,
                      generation_reward, masked_combination)
from .tabular import Column, ColumnKind, Dataset, Task, split_folds
from .transforms import (ALL_OPS, BIN_LEAVES, BINARY_OPS, FeatureExpression,
                         GeneratedFeature, IDENTITY_OPS, UNARY_OPS, apply_binary,
                         apply_unary, bin_min_leaf, bin_with_tree, cross)

ABLATIONS = ("k", "t", "c")


def _global_op_index(op: str) -> int:
    return ALL_OPS.index(op)


@dataclass(frozen=True)
class WorkingFeature:
    """One feature of the evolving working set: values plus provenance."""

    values: np.ndarray
    expr: FeatureExpression

    @property
    def is_discrete(self) -> bool:
        return self.values.dtype.kind in "iu"

    @property
    def name(self) -> str:
        return str(self.expr)


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 200
    steps: int = 6
    seed: int = 0
    weights: RewardWeights = field(default_factory=RewardWeights)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    gamma_disc: float = 0.99
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    cap: int | None = None        # None -> 4x the original feature count
    folds: int = 5
    metric: str | None = None     # None -> task default
    ablation: str | None = None   # None | "k" | "t" | "c"
    chain_epochs: bool = False
    masked_rewards: bool = False
    target_sync_every: int = 0
    batch_size: int = BATCH_SIZE

    def validate(self, n_original: int) -> int:
        """Check invariants and return the resolved feature cap."""
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        cap = self.cap if self.cap is not None else 4 * n_original
        if cap < n_original:
            raise ConfigError(f"cap {cap} below original feature count {n_original}")
        return cap


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    score: float
    r1: float
    mean_r2: float
    epsilon: float
    n_features: int
    error: str | None = None


@dataclass
class SearchResult:
    best_features: list[WorkingFeature]
    best_score: float
    base_score: float
    trace: list[StepRecord]
    epoch_best: list[float]
    task: Task
    metric: str
    searched: Dataset
    config: SearchConfig
    flagged_steps: list[tuple[int, int, str]]
    #: per-feature reward breakdowns: (epoch, step, feature, RewardBreakdown)
    reward_log: list[tuple[int, int, int, RewardBreakdown]] = field(default_factory=list)

    @property
    def delta(self) -> float:
        return self.best_score - self.base_score


def originals_of(d: Dataset) -> list[WorkingFeature]:
    return [WorkingFeature(c.values, FeatureExpression.original(c.name))
            for c in d.features]


def continuized(d: Dataset) -> Dataset:
    """Discrete feature columns reinterpreted as continuous codes (the
    no-type-distinction ablation).  All-continuous datasets pass through
    unchanged."""
    if all(not c.is_discrete for c in d.features):
        return d
    feats = tuple(
        Column(c.name, ColumnKind.CONTINUOUS, c.values.astype(np.float64))
        if c.is_discrete else c
        for c in d.features)
    return Dataset(feats, d.target, d.task)


def generate_features(working: list[WorkingFeature], target: Column,
                      t1: list[OpChoice]) -> list[GeneratedFeature | None]:
    """Materialize the generation agent's operator sequence; identity actions
    yield None."""
    if len(t1) != len(working):
        raise ValueError("operator sequence length must match feature count")
    n = target.values.shape[0]
    out: list[GeneratedFeature | None] = []
    for i, choice in enumerate(t1):
        op = choice.op
        feat = working[i]
        if op in IDENTITY_OPS:
            out.append(None)
        elif op in UNARY_OPS:
            if feat.is_discrete:
                raise ValueError(f"continuous operator {op} on discrete feature")
            out.append(GeneratedFeature(apply_unary(feat.values, op),
                                        FeatureExpression.apply(op, feat.expr), i))
        elif op in BINARY_OPS:
            partner = working[choice.partner]
            out.append(GeneratedFeature(
                apply_binary(feat.values, partner.values, op),
                FeatureExpression.apply(op, feat.expr, partner.expr), i))
        elif op == "cross":
            partner = working[choice.partner]
            if partner.is_discrete:
                b_vals, b_expr = partner.values, partner.expr
            else:
                b_vals = bin_with_tree(partner.values, target.values, BIN_LEAVES,
                                       min_leaf=bin_min_leaf(n))
                b_expr = FeatureExpression.binned(partner.expr, BIN_LEAVES)
            out.append(GeneratedFeature(cross(feat.values, b_vals),
                                        FeatureExpression.apply("cross", feat.expr, b_expr), i))
        else:
            raise ValueError(f"unknown operator {op!r}")
    return out


def _dedup(entries: list[WorkingFeature]) -> list[WorkingFeature]:
    seen = set()
    feats = []
    for f in entries:
        key = str(f.expr)
        if key in seen:
            continue
        seen.add(key)
        feats.append(f)
    return feats


def _cap_prune(feats: list[WorkingFeature], cap: int, y: np.ndarray
               ) -> list[WorkingFeature]:
    if len(feats) <= cap:
        return feats
    prunable = [(pos, mutual_information(f.values, y))
                for pos, f in enumerate(feats) if f.expr.order >= 1]
    # lowest target MI goes first, ties drop the later column
    drop_order = sorted(prunable, key=lambda pm: (pm[1], -pm[0]))
    to_drop = {pos for pos, _ in drop_order[:len(feats) - cap]}
    return [f for pos, f in enumerate(feats) if pos not in to_drop]


def _descendant_map(working: list[WorkingFeature],
                    gens: list[GeneratedFeature | None], t2: list[int],
                    new_working: list[WorkingFeature]) -> list[int]:
    """Row of each pre-step feature's successor in the new set (replace ->
    the generated feature, otherwise the surviving original; falls back to
    row 0 if both were pruned)."""
    pos_of = {str(f.expr): p for p, f in enumerate(new_working)}
    out = []
    for i, f in enumerate(working):
        g = gens[i]
        keys = [str(f.expr)]
        if g is not None:
            if t2[i] == 1:  # replace
                keys = [str(g.expr), str(f.expr)]
            elif t2[i] == 2:  # add
                keys = [str(f.expr), str(g.expr)]
        out.append(next((pos_of[k] for k in keys if k in pos_of), 0))
    return out


def combine_sets(working: list[WorkingFeature],
                 gens: list[GeneratedFeature | None], t2: list[int],
                 cap: int, y: np.ndarray
                 ) -> tuple[list[WorkingFeature], list[int], bool]:
    """Apply the discriminator sequence: 0 delete (keep only the original),
    1 replace (keep only the new feature), 2 add (keep both).  Duplicate
    expressions are deduplicated keeping the first; generated features with
    the lowest target MI are dropped while the cap is exceeded."""
    entries: list[WorkingFeature] = []
    for i, f in enumerate(working):
        g = gens[i]
        if g is None:
            entries.append(f)
            continue
        gf = WorkingFeature(g.values, g.expr)
        if t2[i] == 0:
            entries.append(f)
        elif t2[i] == 1:
            entries.append(gf)
        else:
            entries.append(f)
            entries.append(gf)
    feats = _cap_prune(_dedup(entries), cap, y)
    flagged = False
    if not feats:
        feats = list(working)
        flagged = True
    return feats, _descendant_map(working, gens, t2, feats), flagged


def topk_mi_filter(working: list[WorkingFeature],
                   gens: list[GeneratedFeature | None], k_keep: int,
                   y: np.ndarray) -> tuple[list[WorkingFeature], list[int]]:
    """Discriminator-free variant: pool originals and generated features and
    keep the k_keep with the highest target MI (ties keep earlier columns)."""
    pool = _dedup([*working,
                   *(WorkingFeature(g.values, g.expr) for g in gens if g is not None)])
    scored = [(pos, mutual_information(f.values, y)) for pos, f in enumerate(pool)]
    ranked = sorted(scored, key=lambda pm: (-pm[1], pm[0]))
    keep = sorted(pos for pos, _ in ranked[:k_keep])
    feats = [pool[pos] for pos in keep]
    t2 = [2 if g is not None else 0 for g in gens]
    return feats, _descendant_map(working, gens, t2, feats)


def apply_actions(d: Dataset | list[WorkingFeature], t1: list[OpChoice],
                  t2: list[int], cap: int | None = None,
                  target: Column | None = None) -> list[WorkingFeature]:
    """One-shot surface over generate + combine, starting either from a
    dataset's original features or from an existing working set."""
    if isinstance(d, Dataset):
        working, target = originals_of(d), d.target
    else:
        working = d
        if target is None:
            raise ValueError("target column required with a working-set input")
    if cap is None:
        cap = max(len(working), 4 * len(working))
    gens = generate_features(working, target, t1)
    feats, _, _ = combine_sets(working, gens, t2, cap, target.values)
    return feats


def _nan_record(epoch: int, step: int, eps: float, n_features: int,
                error: str) -> StepRecord:
    return StepRecord(epoch, step, float("nan"), float("nan"), float("nan"),
                      eps, n_features, error=error)


def run_search(d: Dataset, cfg: SearchConfig) -> SearchResult:
    """Full dual-agent search over *d* (Algorithm: per epoch, K chained steps
    of embed -> generate -> discriminate -> apply -> evaluate -> reward ->
    replay -> TD updates), deterministic for a fixed seed."""
    view = continuized(d) if cfg.ablation == "c" else d
    cap = cfg.validate(len(view.features))
    metric = cfg.metric or default_metric(view.task)
    folds = split_folds(view, cfg.folds, cfg.seed)
    evaluator = CachedEvaluator(cfg.learner, folds, view.task, metric)
    y = view.target.values

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    attention = cfg.ablation != "t"
    gen = GenerationAgent(np.random.default_rng(seeds[0]), cfg.encoding,
                          attention=attention,
                          target_sync_every=cfg.target_sync_every)
    disc = None
    if cfg.ablation != "k":
        disc = DiscriminationAgent(np.random.default_rng(seeds[1]), cfg.encoding,
                                   attention=attention,
                                   target_sync_every=cfg.target_sync_every)
    act_rng = np.random.default_rng(seeds[2])
    replay_rng = np.random.default_rng(seeds[3])

    originals = originals_of(view)

    def score_of(feats: list[WorkingFeature]) -> float:
        return evaluator.evaluate([f.name for f in feats],
                                  [f.values for f in feats], y)

    base_score = score_of(originals)
    best_feats = list(originals)
    best_score = base_score
    working = list(originals)
    trace: list[StepRecord] = []
    epoch_best: list[float] = []
    flagged_steps: list[tuple[int, int, str]] = []
    reward_log: list[tuple[int, int, int, RewardBreakdown]] = []

    for epoch in range(cfg.epochs):
        if not cfg.chain_epochs:
            working = list(originals)
        eps = cfg.epsilon.value(epoch, cfg.epochs)
        pending: list[tuple[Transition, int]] = []
        for step in range(cfg.steps):
            terminal = step == cfg.steps - 1
            try:
                desc, kinds = state_inputs([f.values for f in working], y)
                t1 = gen.act(desc, kinds, working, eps, act_rng)
                if disc is not None:
                    # previous step's discriminator transitions were waiting
                    # for this step's operator choices (their next-state op)
                    for proto, next_row in pending:
                        disc.replay.push(dataclasses.replace(
                            proto, next_op=_global_op_index(t1[next_row].op)))
                    pending = []
                    t2 = disc.act(desc, kinds, t1, eps, act_rng)
                else:
                    t2 = [2] * len(working)

                gens = generate_features(working, view.target, t1)
                if cfg.ablation == "k":
                    new_working, desc_map = topk_mi_filter(
                        working, gens, len(view.features), y)
                    step_flagged = False
                else:
                    new_working, desc_map, step_flagged = combine_sets(
                        working, gens, t2, cap, y)
                score = score_of(new_working)
                if step_flagged:
                    flagged_steps.append((epoch, step, "empty result, kept originals"))

                r1 = generation_reward(score, base_score)
                breakdowns: list[RewardBreakdown] = []
                for i, f in enumerate(working):
                    f_new = gens[i].values if gens[i] is not None else None
                    breakdowns.append(discrimination_reward(
                        f.values, f_new, y, score, base_score, cfg.weights))
                    reward_log.append((epoch, step, i, breakdowns[-1]))

                ndesc, nkinds = state_inputs([f.values for f in new_working], y)
                for i in range(len(working)):
                    s_view = StateView(desc, kinds, i)
                    n_view = StateView(ndesc, nkinds, desc_map[i])
                    action = gen.action_index(kinds[i], t1[i].op)
                    gen.replay.push(Transition(s_view, action, r1, n_view, terminal))
                    if disc is not None:
                        if cfg.masked_rewards:
                            r2 = masked_combination(breakdowns[i],
                                                    ("delete", "replace", "add")[t2[i]],
                                                    cfg.weights)
                        else:
                            r2 = breakdowns[i].r2
                        tr = Transition(s_view, t2[i], r2, n_view, terminal,
                                        op=_global_op_index(t1[i].op))
                        if terminal:
                            disc.replay.push(tr)
                        else:
                            pending.append((tr, desc_map[i]))

                if len(gen.replay) >= cfg.batch_size:
                    gen.update(gen.replay.sample(cfg.batch_size, replay_rng),
                               cfg.gamma_disc)
                if disc is not None and len(disc.replay) >= cfg.batch_size:
                    disc.update(disc.replay.sample(cfg.batch_size, replay_rng),
                                cfg.gamma_disc)

                mean_r2 = (float(np.mean([b.r2 for b in breakdowns]))
                           if disc is not None else float("nan"))
                trace.append(StepRecord(epoch, step, score, r1, mean_r2, eps,
                                        len(new_working)))
                if score > best_score:
                    best_score = score
                    best_feats = list(new_working)
                working = new_working
            except Exception as exc:  # step aborts, run continues
                pending = []
                flagged_steps.append((epoch, step, f"step error: {exc}"))
                trace.append(_nan_record(epoch, step, eps, len(working), str(exc)))
        epoch_best.append(best_score)

    return SearchResult(best_feats, best_score, base_score, trace, epoch_best,
                        view.task, metric, view, cfg, flagged_steps, reward_log)


def order_report(result: SearchResult) -> tuple[int, int, float]:
    """(low-order count, high-order count, high-order proportion) of the best
    feature set; an order >= 2 derivation counts as high-order."""
    orders = [f.expr.order for f in result.best_features]
    high = sum(1 for o in orders if o >= 2)
    low = len(orders) - high
    total = len(orders)
    return low, high, (high / total if total else 0.0)


def run_ablation(d: Dataset, cfg: SearchConfig, variant: str) -> SearchResult:
    """Run one ablation: 'k' (MI top-K filter instead of the discrimination
    agent), 't' (no attention encoder) or 'c' (no discrete/continuous
    distinction)."""
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return run_search(d, dataclasses.replace(cfg, ablation=variant))
