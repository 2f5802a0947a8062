import numpy as np
import pytest

from pilotsim.eventlog import EventLog
from pilotsim.metrics import (MetricsError, intersect, merge_intervals,
                              overhead, rate, subtract, total_length,
                              utilization)

from helpers import tick_busy_slot_seconds


def test_interval_algebra():
    assert merge_intervals([(0, 2), (1, 3), (5, 6)]) == [(0, 3), (5, 6)]
    assert merge_intervals([(2, 2)]) == []
    assert total_length([(0, 3), (5, 6)]) == 4
    assert subtract([(0, 10)], [(2, 4), (6, 7)]) == [(0, 2), (4, 6), (7, 10)]
    assert intersect([(0, 5)], [(3, 8)]) == [(3, 5)]


def _make_log(tasks, nodes=1, cores=4, gpus=2):
    """tasks: (tid, queued, exec_start, exec_end, n_cores, n_gpus)."""
    log = EventLog()
    log.append(0, 'pilot', nodes=nodes, cores_per_node=cores,
               gpus_per_node=gpus, walltime_us=10**9, backend='direct',
               flavor='sim')
    for tid, q, s, e, nc, ng in tasks:
        log.append(q, 'queued', task=tid)
        log.append(s, 'scheduled', task=tid, cores=nc, gpus=ng)
        log.append(s, 'running', task=tid)
        log.append(e, 'done', task=tid, exec_end=e, credit=1)
    return log


def test_utilization_simple():
    log = _make_log([('a', 0, 0, 1_000_000, 2, 1),
                     ('b', 0, 0, 500_000, 2, 0)])
    rep = utilization(log)
    assert rep.busy_core_seconds == pytest.approx(3.0)
    assert rep.busy_gpu_seconds == pytest.approx(1.0)
    assert rep.cpu_utilization == pytest.approx(3.0 / 4.0)
    assert rep.gpu_utilization == pytest.approx(0.5)


def test_utilization_counts_tasks_dying_while_running():
    log = EventLog()
    log.append(0, 'pilot', nodes=1, cores_per_node=4, gpus_per_node=0,
               walltime_us=10**9, backend='direct', flavor='sim')
    log.append(0, 'queued', task='a')
    log.append(0, 'scheduled', task='a', cores=4, gpus=0)
    log.append(0, 'running', task='a')
    log.append(2_000_000, 'lost', task='a')
    rep = utilization(log)
    assert rep.cpu_utilization == pytest.approx(1.0)


def test_utilization_invariant_under_row_permutation():
    log = _make_log([('a', 0, 100, 900_000, 1, 0),
                     ('b', 0, 200, 400_000, 3, 1)])
    rng = np.random.default_rng(1)
    rows = list(log.rows)
    rng.shuffle(rows)
    shuffled = EventLog(rows)
    assert utilization(shuffled).to_json() == utilization(log).to_json()


def test_utilization_matches_tick_oracle_random_traces():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(1, 20))
        tasks = []
        intervals_c, intervals_g = [], []
        for i in range(n):
            s = int(rng.integers(0, 2_000)) * 1000
            e = s + int(rng.integers(1, 3_000)) * 1000
            nc = int(rng.integers(1, 4))
            ng = int(rng.integers(0, 3))
            tasks.append(('t%02d' % i, 0, s, e, nc, ng))
            intervals_c.append((s, e, nc))
            intervals_g.append((s, e, ng))
        log = _make_log(tasks, cores=64, gpus=32)
        t1 = max(r['t'] for r in log.rows)
        rep = utilization(log)
        want_c = tick_busy_slot_seconds(intervals_c, 0, t1) / 1e6
        want_g = tick_busy_slot_seconds(intervals_g, 0, t1) / 1e6
        assert rep.busy_core_seconds == pytest.approx(want_c)
        assert rep.busy_gpu_seconds == pytest.approx(want_g)


def test_utilization_timeline_buckets():
    log = _make_log([('a', 0, 0, 1_500_000, 4, 0)])
    rep = utilization(log, bucket_s=1.0)
    assert rep.timeline[0][1] == pytest.approx(1.0)
    assert rep.timeline[1][1] == pytest.approx(1.0)   # half-bucket, full slots


def test_utilization_requires_pilot_row():
    with pytest.raises(MetricsError, match='pilot row'):
        utilization(EventLog())


def test_rate_conservation():
    """Rate integrated over all windows equals total credited completions."""
    rng = np.random.default_rng(4)
    log = EventLog()
    log.append(0, 'pilot', nodes=1, cores_per_node=4, gpus_per_node=0,
               walltime_us=10**9, backend='direct', flavor='sim')
    total = 0
    for i in range(200):
        t = int(rng.integers(1, 50_000_000))
        c = int(rng.integers(1, 17))
        log.append(t, 'done', task='t%03d' % i, exec_end=t, credit=c)
        total += c
    series = rate(log, 7.0)
    integrated = sum(r for _, r in series.points) * 7.0 / 3600.0
    assert integrated == pytest.approx(total)


def test_rate_fixed_credit_override():
    log = EventLog()
    log.append(0, 'pilot', nodes=1, cores_per_node=1, gpus_per_node=0,
               walltime_us=10**9, backend='direct', flavor='sim')
    for i in range(10):
        log.append((i + 1) * 1_000_000, 'done', task='t%d' % i,
                   exec_end=(i + 1) * 1_000_000, credit=1)
    series = rate(log, 10.0, credit=16)
    assert sum(r for _, r in series.points) * 10.0 / 3600.0 == pytest.approx(160)


def test_overhead_decomposition_sums_exactly():
    log = EventLog()
    log.append(0, 'pilot', nodes=1, cores_per_node=4, gpus_per_node=0,
               walltime_us=10**9, backend='direct', flavor='sim')
    # a: queued 0, launch 3..4, runs 4..6; b: scheduled 1, launch 7, runs 7..9
    for tid, (q, sch, ls, es, ee) in [('a', (0, 1, 3, 4, 6)),
                                      ('b', (0, 1, 7, 7, 9))]:
        log.append(q * 10**6, 'queued', task=tid)
        log.append(sch * 10**6, 'scheduled', task=tid, cores=1, gpus=0)
        log.append(ls * 10**6, 'launching', task=tid)
        log.append(es * 10**6, 'running', task=tid)
        log.append(ee * 10**6, 'done', task=tid, exec_end=ee * 10**6, credit=1)
    rep = overhead(log)
    assert rep.ttx == pytest.approx(9.0)
    assert rep.busy_union == pytest.approx(4.0)
    assert rep.overhead == pytest.approx(5.0)
    assert sum(rep.decomposition.values()) == pytest.approx(rep.overhead)
    assert rep.decomposition['startup'] == pytest.approx(3.0)       # 0..3 s
    assert rep.decomposition['launch-delay'] == pytest.approx(1.0)  # 3..4 s
    assert rep.decomposition['scheduling'] == pytest.approx(1.0)    # 6..7 s


def test_overhead_empty_log():
    rep = overhead(EventLog())
    assert rep.ttx == 0.0 and rep.overhead == 0.0
