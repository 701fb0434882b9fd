"""Unlearning request engine: student-side, teacher-side, and simultaneous
point removal, plus scratch-retrain exactness verification.

Teacher-side removal follows the incremental-relabeling procedure: update
the owning teacher member, regenerate soft labels only for the chunks whose
labeling subensemble contains that member, revert each affected constituent
to its last checkpoint from before the earliest such chunk, and replay
training from there. Labels of earlier chunks are byte-unchanged because
their subensembles never contained the updated member.
"""

from __future__ import annotations

import csv
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoints import CheckpointKey, CheckpointStore, record_state
from .costmodel import CostLedger
from .errors import ConfigError, NotFoundError, ParseError, VerificationError
from .student import (generate_chunk_labels, run_student_round,
                      train_student_constituent)
from .teacher import teacher_unlearn, train_teacher_member

REQUEST_KINDS = ("student_point", "teacher_point", "simultaneous")
GENERATOR_KINDS = ("student_point", "teacher_point", "simultaneous",
                   "simultaneous_aligned", "simultaneous_misaligned")


@dataclass(frozen=True)
class UnlearnRequest:
    request_id: int
    kind: str
    point_id: int

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise ValueError(f"unknown request kind {self.kind!r}")


@dataclass
class UnlearnReport:
    request_id: int
    kind: str
    point_id: int
    affected_teacher_members: tuple[int, ...] = ()
    affected_student_constituents: tuple[int, ...] = ()
    reverted_to: tuple[str, ...] = ()
    chunks_relabeled: tuple[tuple[int, int], ...] = ()
    teacher_steps: int = 0
    student_steps: int = 0
    relabel_inference: int = 0
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "kind": self.kind,
            "point_id": self.point_id,
            "affected_teacher_members": list(self.affected_teacher_members),
            "affected_student_constituents": list(self.affected_student_constituents),
            "reverted_to": list(self.reverted_to),
            "chunks_relabeled": [list(c) for c in self.chunks_relabeled],
            "teacher_steps": self.teacher_steps,
            "student_steps": self.student_steps,
            "relabel_inference": self.relabel_inference,
            "wall_time": self.wall_time,
        }


def _revert_key(plan, k: int, start_l: int, start_j: int) -> CheckpointKey:
    """Checkpoint immediately preceding round (start_l, start_j) of shard k."""
    if start_j > 1:
        return CheckpointKey("student", k, start_l, start_j - 1)
    if start_l > 1:
        return CheckpointKey("student", k, start_l - 1,
                             plan.slices_in_chunk(k, start_l - 1))
    return CheckpointKey("student", k, 0, 0)


def _retrain_student_from(system, k: int, start_l: int, start_j: int) -> tuple[int, str]:
    """Revert constituent k and replay all rounds from (start_l, start_j).

    Returns (data-point steps, reverted checkpoint description)."""
    net = system.student
    key = _revert_key(net.plan, k, start_l, start_j)
    record = system.store.load(key)
    state = record_state(record)
    epochs = net.budget.epochs_for(net.plan.total_slices_in_shard(k))
    hyper_k = net.constituent_hyper(k)
    steps = 0
    for l in range(start_l, net.plan.chunks_in_shard(k) + 1):
        first_j = start_j if l == start_l else 1
        for j in range(first_j, net.plan.slices_in_chunk(k, l) + 1):
            state, n = run_student_round(
                state, k, l, j, net.plan, net.dataset, net.soft_labels,
                net.provenance, epochs, hyper_k, net.hyper.hard_label_weight,
                system.store, system.ledger, "student_retrain")
            steps += n
    net.constituents[k - 1] = state
    return steps, f"{key}@{record.generation}"


def _relabel_for_member(system, m: int) -> tuple[dict, tuple, int]:
    """Regenerate soft labels of every chunk whose subensemble contains
    member m, from the current (post-update) teacher states.

    Returns ({k: earliest affected chunk}, relabeled (k, l) pairs, inference
    count: one unit per point per consulted member)."""
    net = system.student
    affected: dict[int, int] = {}
    relabeled = []
    inference = 0
    for (k, l), member_ids in sorted(net.provenance.items()):
        if m not in member_ids:
            continue
        chunk, ids = generate_chunk_labels(
            net.mode, net.mapping, system.teacher.members, net.plan,
            net.dataset, k, l, net.hyper.temperature)
        assert ids == member_ids
        net.soft_labels[(k, l)] = chunk
        relabeled.append((k, l))
        count = len(chunk) * len(member_ids)
        inference += count
        system.ledger.add("relabel_inference", "student", k, count)
        affected[k] = min(affected.get(k, l), l)
    return affected, tuple(relabeled), inference


def unlearn_student(system, point_id, request_id: int = 0):
    """Remove a point from the student dataset's partition and replay the
    owning constituent from the last checkpoint that never trained on it.
    Soft labels are untouched except for dropping the removed pair."""
    t0 = time.perf_counter()
    k, l, j = system.student.plan.locate(point_id)
    system.student.plan.remove(point_id)
    system.student.soft_labels[(k, l)] = \
        system.student.soft_labels[(k, l)].without(point_id)
    steps, reverted = _retrain_student_from(system, k, l, j)
    report = UnlearnReport(request_id, "student_point", int(point_id),
                           affected_student_constituents=(k,),
                           reverted_to=(reverted,), student_steps=steps,
                           wall_time=time.perf_counter() - t0)
    return system, report


def unlearn_teacher(system, point_id, request_id: int = 0):
    """Remove a point from the teacher dataset: SISA-update the owning
    member, regenerate the labels it contributed to, and replay every
    affected constituent from before its earliest relabeled chunk."""
    t0 = time.perf_counter()
    _, m, j, t_steps, t_reverted = teacher_unlearn(
        system.teacher, point_id, system.store, system.ledger)
    affected, relabeled, inference = _relabel_for_member(system, m)
    reverted = [t_reverted]
    s_steps = 0
    for k in sorted(affected):
        steps, rev = _retrain_student_from(system, k, affected[k], 1)
        s_steps += steps
        reverted.append(rev)
    report = UnlearnReport(request_id, "teacher_point", int(point_id),
                           affected_teacher_members=(m,),
                           affected_student_constituents=tuple(sorted(affected)),
                           reverted_to=tuple(reverted),
                           chunks_relabeled=relabeled, teacher_steps=t_steps,
                           student_steps=s_steps, relabel_inference=inference,
                           wall_time=time.perf_counter() - t0)
    return system, report


def unlearn_simultaneous(system, point_id, request_id: int = 0):
    """Remove a point present in both datasets at once.

    Aligned case (the student location's chunk is labeled first by the
    point's own teacher): one combined pass over a single constituent.
    Misaligned case: the teacher-side and student-side procedures run on
    their respective constituents; if they happen to share a constituent,
    one replay from the earlier reversion point covers both."""
    t0 = time.perf_counter()
    if point_id not in system.student.plan:
        raise NotFoundError(f"point {point_id} is not in the student partition")
    if point_id not in system.teacher.plan:
        raise NotFoundError(f"point {point_id} is not in the teacher partition")
    k, l, j = system.student.plan.locate(point_id)

    _, m, _, t_steps, t_reverted = teacher_unlearn(
        system.teacher, point_id, system.store, system.ledger)
    system.student.plan.remove(point_id)
    system.student.soft_labels[(k, l)] = \
        system.student.soft_labels[(k, l)].without(point_id)
    affected, relabeled, inference = _relabel_for_member(system, m)

    # merge the student-side starting round into the teacher-side reversion map
    starts: dict[int, tuple[int, int]] = {kk: (ll, 1) for kk, ll in affected.items()}
    if k in starts:
        starts[k] = min(starts[k], (l, j))
    else:
        starts[k] = (l, j)

    reverted = [t_reverted]
    s_steps = 0
    for kk in sorted(starts):
        start_l, start_j = starts[kk]
        steps, rev = _retrain_student_from(system, kk, start_l, start_j)
        s_steps += steps
        reverted.append(rev)
    report = UnlearnReport(request_id, "simultaneous", int(point_id),
                           affected_teacher_members=(m,),
                           affected_student_constituents=tuple(sorted(starts)),
                           reverted_to=tuple(reverted),
                           chunks_relabeled=relabeled, teacher_steps=t_steps,
                           student_steps=s_steps, relabel_inference=inference,
                           wall_time=time.perf_counter() - t0)
    return system, report


def apply_request(system, request: UnlearnRequest):
    if request.kind == "student_point":
        return unlearn_student(system, request.point_id, request.request_id)
    if request.kind == "teacher_point":
        return unlearn_teacher(system, request.point_id, request.request_id)
    return unlearn_simultaneous(system, request.point_id, request.request_id)


def is_aligned(system, point_id) -> bool:
    """True when the point's student chunk is the one first labeled by the
    point's own teacher member."""
    k, l, _ = system.student.plan.locate(point_id)
    m, _, _ = system.teacher.plan.locate(point_id)
    return system.student.mapping.owner_of(m) == (k, l)


# ----------------------------------------------------------------------------
# Exactness verification
# ----------------------------------------------------------------------------

@dataclass
class VerificationVerdict:
    passed: bool
    max_param_diff: float
    checked_teacher_members: tuple[int, ...] = ()
    checked_student_constituents: tuple[int, ...] = ()
    failures: tuple[str, ...] = ()


def _affected_sets(system_before, request: UnlearnRequest):
    """(teacher members, student constituents) the request will touch,
    derived from the pre-removal system."""
    if request.kind == "student_point":
        k, _, _ = system_before.student.plan.locate(request.point_id)
        return (), (k,)
    m, _, _ = system_before.teacher.plan.locate(request.point_id)
    prov = system_before.student.provenance
    ks = {k for (k, _), ms in prov.items() if m in ms}
    if request.kind == "simultaneous":
        k, _, _ = system_before.student.plan.locate(request.point_id)
        ks.add(k)
    return (m,), tuple(sorted(ks))


def verify_exactness(system_before, request: UnlearnRequest,
                     system_after) -> VerificationVerdict:
    """Independently retrain every affected constituent from scratch on the
    post-removal data and assert exact parameter equality with the updated
    system; non-targeted constituents must be byte-identical to before."""
    if not getattr(system_after, "deterministic", True):
        raise VerificationError(
            "system was not built with recorded seeds; exactness is undecidable")
    t_ms, s_ks = _affected_sets(system_before, request)
    failures = []
    max_diff = 0.0

    for m in range(1, system_after.teacher.member_count + 1):
        if m in t_ms:
            continue
        if not np.array_equal(system_before.teacher.members[m - 1].params,
                              system_after.teacher.members[m - 1].params):
            failures.append(f"non-targeted teacher {m} changed")
    for k in range(1, system_after.student.constituent_count + 1):
        if k in s_ks:
            continue
        if not np.array_equal(system_before.student.constituents[k - 1].params,
                              system_after.student.constituents[k - 1].params):
            failures.append(f"non-targeted constituent {k} changed")

    with tempfile.TemporaryDirectory(prefix="purgekd-verify-") as tmp:
        scratch_store = CheckpointStore(tmp)
        scratch_ledger = CostLedger()
        for m in t_ms:
            scratch = train_teacher_member(
                m, system_after.teacher.plan, system_after.teacher.dataset,
                system_after.teacher.budget, system_after.teacher.arch,
                system_after.teacher.hyper, scratch_store, scratch_ledger,
                system_after.teacher.seed)
            diff = float(np.max(np.abs(
                scratch.params - system_after.teacher.members[m - 1].params),
                initial=0.0))
            max_diff = max(max_diff, diff)
            if diff != 0.0:
                failures.append(f"teacher {m}: scratch retrain differs by {diff}")
        net = system_after.student
        for k in s_ks:
            soft: dict = {}
            prov: dict = {}
            scratch = train_student_constituent(
                k, net.plan, net.dataset, net.mapping,
                system_after.teacher.members, net.budget, net.arch, net.hyper,
                scratch_store, scratch_ledger, net.mode, net.seed, soft, prov)
            diff = float(np.max(np.abs(
                scratch.params - net.constituents[k - 1].params), initial=0.0))
            max_diff = max(max_diff, diff)
            if diff != 0.0:
                failures.append(f"constituent {k}: scratch retrain differs by {diff}")
            for l in range(1, net.plan.chunks_in_shard(k) + 1):
                cached = net.soft_labels[(k, l)]
                if prov[(k, l)] != net.provenance[(k, l)]:
                    failures.append(f"constituent {k}: provenance of chunk {l} differs")
                elif (soft[(k, l)].point_ids != cached.point_ids
                      or not np.array_equal(soft[(k, l)].probs, cached.probs)):
                    failures.append(f"constituent {k}: cached labels of chunk {l} "
                                    "do not match the current teachers")

    return VerificationVerdict(not failures, max_diff, t_ms, s_ks, tuple(failures))


# ----------------------------------------------------------------------------
# Request streams
# ----------------------------------------------------------------------------

def parse_request_stream(path) -> list[UnlearnRequest]:
    """Read a ``seq,target_kind,point_id`` CSV into requests."""
    requests = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and row[0].strip().lower() == "seq":
                continue
            if len(row) != 3:
                raise ParseError(f"{path}: line {lineno}: expected seq,target_kind,point_id")
            try:
                seq = int(row[0])
                pid = int(row[2])
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            kind = row[1].strip()
            if kind not in REQUEST_KINDS:
                raise ParseError(f"{path}: line {lineno}: unknown target_kind {kind!r}")
            requests.append(UnlearnRequest(seq, kind, pid))
    return requests


def write_request_stream(path, requests) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "target_kind", "point_id"])
        for r in requests:
            writer.writerow([r.request_id, r.kind, r.point_id])


def _allocate_counts(count: int, mix: dict) -> dict:
    """Largest-remainder allocation of `count` requests over mix weights."""
    weights = {k: float(v) for k, v in mix.items() if float(v) > 0}
    if not weights:
        raise ConfigError("requests.mix: at least one positive weight required")
    for kind in weights:
        if kind not in GENERATOR_KINDS:
            raise ConfigError(f"requests.mix: unknown kind {kind!r}")
    total = sum(weights.values())
    raw = {k: count * w / total for k, w in weights.items()}
    counts = {k: int(raw[k]) for k in weights}
    short = count - sum(counts.values())
    for k in sorted(weights, key=lambda k: (-(raw[k] - counts[k]), GENERATOR_KINDS.index(k))):
        if short == 0:
            break
        counts[k] += 1
        short -= 1
    return counts


def generate_requests(system, count: int, mix: dict, seed: int) -> list[UnlearnRequest]:
    """Deterministic request stream against a trained system.

    student_point draws a uniform random untargeted student point;
    teacher_point draws a uniform random teacher member, then a uniform
    untargeted point in its shard; the simultaneous kinds draw uniformly from
    the untargeted points whose locations realize the aligned or misaligned
    case. No point id is used twice within one stream."""
    counts = _allocate_counts(count, mix)
    if any(k.startswith("simultaneous") for k in counts) and not system.shared_dataset:
        raise ConfigError("simultaneous requests need a shared teacher/student dataset")
    rng = np.random.default_rng(seed)
    used: set[int] = set()
    kinds = [k for k in GENERATOR_KINDS for _ in range(counts.get(k, 0))]
    order = rng.permutation(len(kinds))
    requests = []
    for seq, ix in enumerate(order, start=1):
        kind = kinds[ix]
        if kind == "student_point":
            pool = [p for p in system.student.plan.all_ids() if p not in used]
        elif kind == "teacher_point":
            member = int(rng.integers(1, system.teacher.member_count + 1))
            pool = [p for p in system.teacher.plan.shard_ids(member) if p not in used]
        elif kind == "simultaneous":
            pool = [p for p in system.student.plan.all_ids()
                    if p not in used and p in system.teacher.plan]
        else:
            want = kind == "simultaneous_aligned"
            pool = [p for p in system.student.plan.all_ids()
                    if p not in used and p in system.teacher.plan
                    and is_aligned(system, p) == want]
        if not pool:
            raise ConfigError(f"no untargeted points left for kind {kind!r}")
        pid = int(pool[int(rng.integers(0, len(pool)))])
        used.add(pid)
        stream_kind = kind if kind in REQUEST_KINDS else "simultaneous"
        requests.append(UnlearnRequest(seq, stream_kind, pid))
    return requests
