import random

import pytest

from drl.coop import cooperative_detect, fake_origin, potentially_finalized_subset, receptionists_of, summarize
from drl.detection import SnapshotSet, depends_on, maximum_finalized_subset
from drl.errors import DomainOverlap
from drl.facts import Activated, Created, CreatedUsing, RecvCount, SentCount
from drl.runner import coop_problems, home_aggregator
from drl.scheduler import Policy, Simulator

from builders import A, B, C, D, E, qset, ref


def collected(results):
    return set().union(*(set(r.finalized) for r in results))


# -- pruning ------------------------------------------------------------------


def test_finalized_set_is_kept_whole():
    loop = ref(B, 0, B, B)
    q = qset(B=[Created(loop), Activated(loop)])
    assert potentially_finalized_subset(q) == q
    assert potentially_finalized_subset(SnapshotSet()) == SnapshotSet()


def test_count_mismatch_removes_target_and_dependents():
    ab, bc, dc = ref(A, 0, A, B), ref(B, 0, B, C), ref(D, 0, D, A)
    q = qset(
        A=[Activated(ab), SentCount(ab, 2), Created(dc)],
        B=[Created(ab), RecvCount(ab, 1), Activated(bc)],
        C=[Created(bc)],
    )
    # B's inbound chain disagrees on counts; C depends on B; A is only owed by D outside
    assert set(potentially_finalized_subset(q)) == {A}


def test_outside_owner_does_not_prune():
    x = ref(D, 0, D, B)
    q = qset(B=[Created(x)])
    assert potentially_finalized_subset(q) == q


# -- receptionists ------------------------------------------------------------


def test_receptionist_examples():
    ab = ref(A, 0, A, B)
    q = qset(A=[Activated(ab)], B=[Created(ab)])
    assert receptionists_of(q) == frozenset()
    assert receptionists_of(q.without([A])) == {B}


def test_every_member_depends_on_a_receptionist_on_engine_sets():
    checked = 0
    for seed in range(20):
        sim = Simulator(Policy(), seed)
        sim.run(200)
        latest = {s.actor: s for s in sim.snapshots}
        parts = [SnapshotSet(s for a, s in latest.items() if home_aggregator(a, 2) == i) for i in range(2)]
        for p in parts:
            rest = potentially_finalized_subset(p.without(maximum_finalized_subset(p).finalized))
            if not rest or maximum_finalized_subset(rest).finalized:
                continue
            recs = receptionists_of(rest)
            deps = depends_on(rest)
            for c in rest:
                assert deps[c] & recs
            checked += 1
    assert checked > 0


# -- summaries ------------------------------------------------------------------


def one_receptionist():
    """B is reached from D outside; C depends on B and holds a refob leaving the set."""
    db, bc, ce = ref(D, 0, D, B), ref(B, 0, B, C), ref(C, 0, C, E)
    return qset(
        B=[Created(db), RecvCount(db, 2), Activated(bc), SentCount(bc, 1)],
        C=[Created(bc), RecvCount(bc, 1), Activated(ce), SentCount(ce, 3)],
    )


def test_summary_of_one_receptionist_and_a_dependent():
    q = one_receptionist()
    s = summarize(q, aggregator=1)
    assert s.receptionists == {B}
    assert set(s.snapshots) == {B, C}
    assert len(s.fake_refobs) == 1
    fake = s.fake_refobs[0]
    assert (fake.owner, fake.target) == (B, C)
    assert fake.token.origin == fake_origin(1)
    assert Activated(fake) in s.snapshots[B].knowledge
    assert Created(fake) in s.snapshots[C].knowledge


def test_summary_drops_internal_structure():
    s = summarize(one_receptionist())
    bc = ref(B, 0, B, C)
    facts = set(s.snapshots[B].knowledge) | set(s.snapshots[C].knowledge)
    assert SentCount(bc, 1) not in facts
    assert Activated(bc) not in facts
    assert Created(bc) not in facts and RecvCount(bc, 1) not in facts
    assert set(s.snapshots) <= set(one_receptionist())


def test_summary_rendering():
    assert summarize(one_receptionist(), aggregator=1).render() == "\n".join(
        [
            "SUMMARY G1",
            "RECEPTIONISTS A1",
            "snapshot A1",
            "  Created(x=A3!0)",
            "  RecvCount(x=A3!0, 2)",
            "  Activated(x=G1!0)",
            "snapshot A2",
            "  Activated(x=A2!0)",
            "  SentCount(x=A2!0, 3)",
            "  Created(x=G1!0)",
            "FAKE",
            "  G1!0:A1->A2",
        ]
    )


def test_summary_keeps_boundary_created_using():
    db, be, z = ref(D, 0, D, B), ref(B, 0, B, E), ref(B, 1, D, E)
    s = summarize(qset(B=[Created(db), Activated(be), CreatedUsing(be, z)]))
    assert CreatedUsing(be, z) in s.snapshots[B].knowledge


# -- cooperative detection -------------------------------------------------------


def two_cycle_parts():
    ab, ba = ref(A, 0, A, B), ref(B, 0, B, A)
    a = [Activated(ab), Created(ba), SentCount(ab, 3), RecvCount(ba, 1)]
    b = [Activated(ba), Created(ab), SentCount(ba, 1), RecvCount(ab, 3)]
    return qset(A=a), qset(B=b)


def test_single_part_matches_central():
    p1, p2 = two_cycle_parts()
    q = p1.union(p2)
    (res,) = cooperative_detect([q])
    assert res.finalized == maximum_finalized_subset(q).finalized


def test_cycle_split_across_parts_is_collected():
    p1, p2 = two_cycle_parts()
    assert not maximum_finalized_subset(p1).finalized
    assert not maximum_finalized_subset(p2).finalized
    assert collected(cooperative_detect([p1, p2])) == {A, B}


def test_cycle_with_busy_edge_is_not_collected():
    ab, ba = ref(A, 0, A, B), ref(B, 0, B, A)
    p1 = qset(A=[Activated(ab), Created(ba), SentCount(ab, 3), RecvCount(ba, 1)])
    p2 = qset(B=[Activated(ba), Created(ab), SentCount(ba, 1), RecvCount(ab, 2)])
    assert collected(cooperative_detect([p1, p2])) == set()


def test_locally_finalized_actor_is_still_summarized():
    # A is finalized alone in its part but holds the only refob into B, which is in the other part
    aa, ab = ref(A, 0, A, A), ref(A, 1, A, B)
    p1 = qset(A=[Created(aa), Activated(aa), Activated(ab)])
    p2 = qset(B=[Created(ab)])
    central = set(maximum_finalized_subset(p1.union(p2)).finalized)
    assert central == {A, B}
    assert collected(cooperative_detect([p1, p2])) == central


def test_overlapping_parts_are_rejected():
    p1, p2 = two_cycle_parts()
    with pytest.raises(DomainOverlap):
        cooperative_detect([p1, p1.union(p2)])


@pytest.mark.parametrize("parts", [2, 3])
def test_random_partitions_of_engine_sets_agree_with_central(parts):
    rng = random.Random(parts)
    for seed in range(25):
        sim = Simulator(Policy(batch_release=seed % 2 == 1), seed)
        sim.run(250)
        sim.quiesce()
        latest = {s.actor: s for s in sim.snapshots}
        for _ in range(3):
            owner = {a: rng.randrange(parts) for a in latest}
            split = [SnapshotSet(s for a, s in latest.items() if owner[a] == i) for i in range(parts)]
            assert coop_problems(split) == []
