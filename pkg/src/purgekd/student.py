"""Distilled student network trained incrementally against a growing teacher
subensemble.

Each constituent k owns shard k, split into chunks. Chunk l is soft-labeled
by the subensemble of the first l teachers mapped to k; chunks are further
sliced, and the constituent trains on its cumulative data (all earlier
chunks plus slices 1..j of the current chunk) for the per-slice epoch
budget, checkpointing after every round. Two baseline labeling modes share
the identical training path: naive_sisa labels every chunk with the full
teacher ensemble, single_teacher labels chunk l with teacher l alone.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model
from .checkpoints import CheckpointKey, CheckpointStore, state_record
from .costmodel import CostLedger
from .data import Dataset, PartitionPlan, even_split_sizes, make_partition
from .errors import NotFoundError
from .model import (SEED_STUDENT, SEED_STUDENT_PLAN, ModelArch, ModelState,
                    SoftLabelChunk, TrainHyper, mix_seed, subensemble_soft_labels)
from .teacher import TrainBudget

MODES = ("purge", "naive_sisa", "single_teacher")


@dataclass(frozen=True)
class ConstituentMapping:
    """Disjoint ordered assignment of teacher members 1..M to constituents."""

    assignment: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = [m for ms in self.assignment for m in ms]
        expected = list(range(1, len(seen) + 1))
        if not self.assignment or any(not ms for ms in self.assignment):
            raise ValueError("every constituent needs at least one teacher")
        if sorted(seen) != expected:
            raise ValueError("assignment must partition teachers 1..M")

    @property
    def num_students(self) -> int:
        return len(self.assignment)

    @property
    def num_teachers(self) -> int:
        return sum(len(ms) for ms in self.assignment)

    def teachers_for(self, k: int) -> tuple[int, ...]:
        return self.assignment[k - 1]

    def chunk_count(self, k: int) -> int:
        return len(self.assignment[k - 1])

    def owner_of(self, m: int) -> tuple[int, int]:
        """(constituent k, chunk position l) of teacher member m."""
        for k, ms in enumerate(self.assignment, start=1):
            if m in ms:
                return k, ms.index(m) + 1
        raise NotFoundError(f"teacher {m} is not mapped to any constituent")


def build_mapping(num_teachers: int, num_students: int,
                  sizes=None) -> ConstituentMapping:
    """Assign teachers 1..M to constituents in index order, as evenly as
    possible (remainder to the lowest-index constituents), or by explicit
    per-constituent sizes."""
    if sizes is None:
        if num_students > num_teachers:
            raise ValueError("every constituent needs at least one teacher")
        sizes = even_split_sizes(num_teachers, num_students)
    else:
        sizes = list(sizes)
        if len(sizes) != num_students:
            raise ValueError("need one size per constituent")
        if any(s < 1 for s in sizes):
            raise ValueError("mapping sizes must be >= 1")
        if sum(sizes) != num_teachers:
            raise ValueError(f"mapping sizes sum to {sum(sizes)}, expected {num_teachers}")
    assignment = []
    next_m = 1
    for s in sizes:
        assignment.append(tuple(range(next_m, next_m + s)))
        next_m += s
    return ConstituentMapping(tuple(assignment))


def chunk_teacher_ids(mode: str, mapping: ConstituentMapping, k: int,
                      l: int) -> tuple[int, ...]:
    """Teacher member ids whose averaged outputs label chunk (k, l)."""
    mapped = mapping.teachers_for(k)
    if mode == "purge":
        return mapped[:l]
    if mode == "single_teacher":
        return (mapped[l - 1],)
    if mode == "naive_sisa":
        return tuple(range(1, mapping.num_teachers + 1))
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class StudentNetwork:
    constituents: list[ModelState]
    mapping: ConstituentMapping
    plan: PartitionPlan
    dataset: Dataset
    mode: str
    soft_labels: dict  # (k, l) -> SoftLabelChunk
    provenance: dict   # (k, l) -> tuple of teacher member ids
    budget: TrainBudget
    arch: ModelArch
    hyper: TrainHyper
    seed: int
    traces: dict | None = None  # k -> [(round, mean loss)] when tracing was on

    @property
    def constituent_count(self) -> int:
        return len(self.constituents)

    def constituent_hyper(self, k: int) -> TrainHyper:
        return model.stream_hyper(self.hyper, SEED_STUDENT, k)

    def predict_proba(self, features):
        """Exact mean of all constituents' softmax outputs for one vector."""
        if not self.constituents:
            raise ValueError("student network has no trained constituents")
        return model.aggregate([model.predict(s, features) for s in self.constituents])

    def predict_proba_batch(self, features):
        if not self.constituents:
            raise ValueError("student network has no trained constituents")
        return model.aggregate_batch(
            [model.predict_batch(s, features) for s in self.constituents])


def _provenance_snapshot(provenance: dict, k: int) -> tuple:
    return tuple(sorted((l, tuple(ms)) for (kk, l), ms in provenance.items()
                        if kk == k))


def _gather_round(plan: PartitionPlan, dataset: Dataset, soft_labels: dict,
                  k: int, l: int, j: int):
    """Cumulative training arrays for round (l, j): chunks 1..l-1 in full
    plus slices 1..j of chunk l, in plan order."""
    ids = []
    soft_rows = []
    for i in range(1, l):
        chunk_ids = plan.chunk_ids(k, i)
        ids.extend(chunk_ids)
        soft_rows.append(soft_labels[(k, i)].probs_for(chunk_ids))
    partial = [p for q in range(1, j + 1) for p in plan.slice_ids(k, l, q)]
    ids.extend(partial)
    soft_rows.append(soft_labels[(k, l)].probs_for(partial))
    x = dataset.features_for(ids)
    soft = np.vstack([rows for rows in soft_rows if len(rows)])
    hard = dataset.labels_for(ids)
    return ids, x, soft, hard


def run_student_round(state: ModelState, k: int, l: int, j: int,
                      plan: PartitionPlan, dataset: Dataset, soft_labels: dict,
                      provenance: dict, epochs: int, hyper_k: TrainHyper,
                      alpha: float, store: CheckpointStore, ledger: CostLedger,
                      phase: str, trace: list | None = None):
    """One slice round of constituent k: train on the cumulative data, store
    the checkpoint, account the steps. Returns (state, steps)."""
    ids, x, soft, hard = _gather_round(plan, dataset, soft_labels, k, l, j)
    state = model.train(state, x, soft, hard, epochs, hyper_k)
    steps = len(ids) * epochs
    ledger.add(phase, "student", k, steps)
    key = CheckpointKey("student", k, l, j)
    store.save(key, state_record(key, state, _provenance_snapshot(provenance, k)))
    if trace is not None:
        round_no = sum(plan.slices_in_chunk(k, i) for i in range(1, l)) + j
        trace.append((round_no, model.mean_distill_loss(state, x, soft, hard, alpha)))
    return state, steps


def generate_chunk_labels(mode: str, mapping: ConstituentMapping,
                          teacher_members, plan: PartitionPlan, dataset: Dataset,
                          k: int, l: int, temperature: float) -> tuple[
                              SoftLabelChunk, tuple[int, ...]]:
    """Soft labels for chunk (k, l) under the given labeling mode."""
    member_ids = chunk_teacher_ids(mode, mapping, k, l)
    ids = plan.chunk_ids(k, l)
    chunk = subensemble_soft_labels([teacher_members[m - 1] for m in member_ids],
                                    ids, dataset.features_for(ids), temperature)
    return chunk, member_ids


def train_student_constituent(k: int, plan: PartitionPlan, dataset: Dataset,
                              mapping: ConstituentMapping, teacher_members,
                              budget: TrainBudget, arch: ModelArch,
                              hyper: TrainHyper, store: CheckpointStore,
                              ledger: CostLedger, mode: str, seed: int,
                              soft_labels: dict, provenance: dict,
                              trace: list | None = None) -> ModelState:
    """Full training pass of one constituent: generate chunk labels as each
    chunk arrives, then run its slice rounds. Fills soft_labels/provenance."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    c_k = plan.chunks_in_shard(k)
    epochs = budget.epochs_for(plan.total_slices_in_shard(k))
    state = model.init_model(arch, mix_seed(seed, SEED_STUDENT, k))
    init_key = CheckpointKey("student", k, 0, 0)
    store.save(init_key, state_record(init_key, state))
    hyper_k = model.stream_hyper(hyper, SEED_STUDENT, k)
    for l in range(1, c_k + 1):
        chunk, member_ids = generate_chunk_labels(
            mode, mapping, teacher_members, plan, dataset, k, l, hyper.temperature)
        soft_labels[(k, l)] = chunk
        provenance[(k, l)] = member_ids
        for j in range(1, plan.slices_in_chunk(k, l) + 1):
            state, _ = run_student_round(state, k, l, j, plan, dataset,
                                         soft_labels, provenance, epochs, hyper_k,
                                         hyper.hard_label_weight, store, ledger,
                                         "initial_train", trace)
    return state


def train_student_network(dataset: Dataset, mapping: ConstituentMapping,
                          teacher_members, budget: TrainBudget, arch: ModelArch,
                          hyper: TrainHyper, store: CheckpointStore,
                          ledger: CostLedger, mode: str, seed: int,
                          slices_per_chunk, trace: bool = False,
                          parallel: bool = False) -> StudentNetwork:
    """Partition the dataset into one shard per constituent (chunk counts set
    by the mapping) and train every constituent.

    slices_per_chunk is either a single int r or explicit per-shard
    sequences of R_{k,l}.
    """
    n = mapping.num_students
    chunk_counts = [mapping.chunk_count(k) for k in range(1, n + 1)]
    if isinstance(slices_per_chunk, int):
        slice_counts = [[slices_per_chunk] * c_k for c_k in chunk_counts]
    else:
        slice_counts = [list(row) for row in slices_per_chunk]
    plan = make_partition(dataset, n, chunk_counts, slice_counts,
                          mix_seed(seed, SEED_STUDENT_PLAN))

    soft_labels: dict = {}
    provenance: dict = {}
    traces: dict | None = {} if trace else None

    def run(k, sub_ledger, sub_soft, sub_prov):
        tr = [] if trace else None
        state = train_student_constituent(k, plan, dataset, mapping,
                                          teacher_members, budget, arch, hyper,
                                          store, sub_ledger, mode, seed,
                                          sub_soft, sub_prov, tr)
        return state, tr

    if parallel:
        subs = [(CostLedger(), {}, {}) for _ in range(n)]
        with ThreadPoolExecutor() as pool:
            futures = [pool.submit(run, k, *subs[k - 1]) for k in range(1, n + 1)]
            results = [f.result() for f in futures]
        states = []
        for k in range(1, n + 1):
            state, tr = results[k - 1]
            states.append(state)
            ledger.extend(subs[k - 1][0].entries)
            soft_labels.update(subs[k - 1][1])
            provenance.update(subs[k - 1][2])
            if trace:
                traces[k] = tr
    else:
        states = []
        for k in range(1, n + 1):
            state, tr = run(k, ledger, soft_labels, provenance)
            states.append(state)
            if trace:
                traces[k] = tr

    return StudentNetwork(states, mapping, plan, dataset, mode, soft_labels,
                          provenance, budget, arch, hyper, seed, traces)


def predict_student(network: StudentNetwork, features):
    """Averaged constituent prediction for one feature vector."""
    return network.predict_proba(features)


def evaluate_accuracy(predictor, dataset: Dataset) -> float:
    """Fraction of points whose argmax predicted class (lowest index wins
    ties) equals the hard label. predictor is anything with a
    predict_proba_batch method, or a bare ModelState."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    if isinstance(predictor, ModelState):
        probs = model.predict_batch(predictor, dataset.features)
    else:
        probs = predictor.predict_proba_batch(dataset.features)
    return float((np.argmax(probs, axis=1) == dataset.labels).mean())


def loss_trace(network: StudentNetwork, k: int):
    """Per-round (round index, mean distillation loss over that round's
    cumulative data at round end) for constituent k's training run."""
    if network.traces is None:
        raise ValueError("loss tracing was not enabled for this training run")
    return list(network.traces[k])
