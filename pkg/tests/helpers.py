"""Shared test oracles: log replay, per-tick utilization, slot enumeration."""

import itertools

from pilotsim.resources import NodeSpec, NodeState, Placement


def replay_no_oversubscription(log):
    """Replay an executor event log against fresh node state: every
    placement must occupy only free slots and release cleanly.  Raises
    SlotError on any conflict; returns the number of placements checked."""
    info = log.pilot_info()
    assert info is not None, 'log has no pilot row'
    nodes = [NodeState(NodeSpec(node_id=i, cpu_cores=info['cores_per_node'],
                                gpus=info['gpus_per_node']))
             for i in range(info['nodes'])]
    by_id = {n.spec.node_id: n for n in nodes}
    held = {}
    checked = 0
    for row in log.rows:
        if row['event'] == 'scheduled' and 'placement' in row:
            pl = Placement.from_json(row['task'], row['placement'])
            for nid in pl.node_ids:
                by_id[nid].occupy(pl)
            held[row['task']] = pl
            checked += 1
        elif row['event'] in ('done', 'failed', 'lost'):
            pl = held.pop(row['task'], None)
            if pl is not None:
                for nid in pl.node_ids:
                    by_id[nid].release(pl)
    assert not held, 'tasks never released: %s' % sorted(held)
    return checked


def tick_busy_slot_seconds(intervals, t0, t1, tick_us=1000):
    """Per-tick oracle for busy slot-time: a slot-weighted interval is busy
    in a tick iff the tick start falls inside it."""
    busy = 0
    for start, end, weight in intervals:
        lo = max(start, t0)
        hi = min(end, t1)
        if hi <= lo:
            continue
        first = -(-(lo - t0) // tick_us)        # ceil to next tick boundary
        last = -(-(hi - t0) // tick_us)
        busy += (last - first) * weight * tick_us
    return busy


def oracle_single_node(task, free_cores, free_gpus):
    """Lexicographically smallest feasible placement of a non-MPI task,
    found by brute-force enumeration of slot combinations per node."""
    need = task.effective_cores
    best = None
    for node_id in sorted(free_cores):
        cores_avail = free_cores[node_id]
        gpus_avail = free_gpus[node_id]
        if len(cores_avail) < need or len(gpus_avail) < task.gpus:
            continue
        for cores in itertools.combinations(sorted(cores_avail), need):
            for gpus in itertools.combinations(sorted(gpus_avail), task.gpus):
                cand = (node_id, cores, gpus)
                if best is None or cand < best:
                    best = cand
            break   # lowest core ids always win; gpu loop already minimal
        break       # lowest node id wins
    return None if best is None else (best,)


def oracle_mpi(task, free_cores, free_gpus):
    """Dense-pack oracle for MPI tasks: fill nodes in ascending id order."""
    ranks, gpus_left = task.ranks, task.gpus
    slots = []
    for node_id in sorted(free_cores):
        take_r = min(len(free_cores[node_id]) // task.cpu_cores_per_rank,
                     ranks)
        take_g = min(len(free_gpus[node_id]), gpus_left)
        if take_r == 0 and take_g == 0:
            continue
        cores = tuple(sorted(free_cores[node_id])[:take_r *
                                                  task.cpu_cores_per_rank])
        gpus = tuple(sorted(free_gpus[node_id])[:take_g])
        slots.append((node_id, cores, gpus))
        ranks -= take_r
        gpus_left -= take_g
        if ranks == 0 and gpus_left == 0:
            return tuple(slots)
    return None


def oracle_schedule(tasks, nodes, gpu_weight, prioritize=True):
    """Independent reimplementation of the continuous scheduler for small
    instances: priority order, then per task the enumerated lexicographic
    minimum placement."""
    free_cores = {n.spec.node_id: set(n.free_core_ids()) for n in nodes}
    free_gpus = {n.spec.node_id: set(n.free_gpu_ids()) for n in nodes}
    order = list(tasks)
    if prioritize:
        order.sort(key=lambda t: -t.priority_hint(gpu_weight))
    out = []
    for task in order:
        fit = (oracle_mpi if task.is_mpi else oracle_single_node)(
            task, free_cores, free_gpus)
        if fit is None:
            continue
        for node_id, cores, gpus in fit:
            free_cores[node_id] -= set(cores)
            free_gpus[node_id] -= set(gpus)
        out.append((task.task_id, fit))
    return out
